"""Dataset synthesis, splits, augmentation, repeated runs, and reports.

The harness generates a fully synthetic benchmark: random binary templates
are printed and acquired through the channel model as originals, re-acquired
from the same ink map as physical references, and attacked with the four
shipped copy-attack configurations (two estimation strategies x two
substrates). Everything derives from one root seed, so a dataset directory,
its manifest, and every downstream report are byte-identical across re-runs.

Experiments follow one protocol: per run, templates are split 40/10/50 into
train/val/test (all codes of a template share a split), a preset-specific
model is trained on the train split, thresholds or hyperparameters are
calibrated on the validation split, and miss/false-acceptance rates are
measured on the test split. Runs differ only in the split (and the model
seeds derived from it); rates aggregate as mean and population std.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .channel import (
    FAKE_LABELS,
    ObservedCode,
    acquire,
    copy_attack,
    default_attack_params,
    default_original_params,
    load_observed,
    print_template,
    save_observed,
)
from .decision import calibrate, rule_ocsvm, rule_one_metric, rule_two_metric
from .deepfeat import AeConfig, extract_features_batch, train_ae
from .errors import DataError, ParameterError
from .imageio import read_json, write_json
from .metrics import feature_vector
from .ocsvm import select_nu
from .rng import derive_seed, rng_for
from .supervised import (
    TrainConfig,
    estimate_mi_lower_bound,
    images_to_features,
    predict,
    train_classifier,
)
from .template import generate_template, load_template, save_template

CLASS_ORDER = ("original",) + FAKE_LABELS

SPLIT_FRACTIONS = {"train": 0.4, "val": 0.1}

GAMMA_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2)

AUGMENT_TAGS = ("identity", "rot90", "rot180", "rot270") + tuple(
    f"gamma-{g:.1f}" for g in GAMMA_GRID
)


# ---------------------------------------------------------------------------
# dataset synthesis


@dataclass(frozen=True)
class DatasetConfig:
    """Knobs for one synthetic dataset. Hash of these names the dataset."""

    n_templates: int = 300
    n_sym: int = 24
    symbol_px: int = 3
    black_fraction: float = 0.5
    physical_refs: bool = True
    plane_jitter: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.n_templates < 1:
            raise ParameterError("n_templates must be positive")
        if not 0.0 < self.black_fraction < 1.0:
            raise ParameterError("black_fraction must be in (0, 1)")
        if self.plane_jitter < 0:
            raise ParameterError("plane_jitter must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "DatasetConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**obj)


def config_hash(config: DatasetConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class DatasetManifest:
    """Index of one synthesized dataset directory."""

    config: DatasetConfig
    config_hash: str
    template_ids: tuple
    codes: list  # {path, label, template_id, split, augmentation}

    @property
    def seed(self) -> int:
        return self.config.seed

    def entries(self, labels: Optional[Sequence[str]] = None) -> list:
        if labels is None:
            return list(self.codes)
        wanted = set(labels)
        return [e for e in self.codes if e["label"] in wanted]


def _template_id(index: int) -> str:
    return f"t{index:04d}"


def _synthesize_template(config: DatasetConfig, index: int, out_dir: Path) -> list:
    """Generate and write one template and its codes; returns manifest rows."""
    root = config.seed
    tid = _template_id(index)
    t = generate_template(
        n_sym=config.n_sym,
        symbol_px=config.symbol_px,
        black_fraction=config.black_fraction,
        seed=derive_seed(root, "template", index),
    )
    save_template(t, out_dir / "templates" / tid)

    ext = ".ppm" if config.plane_jitter > 0 else ".pgm"
    rows = []

    def emit(code: ObservedCode) -> None:
        rel = f"codes/{tid}_{code.label}{ext}"
        save_observed(code, out_dir / rel)
        rows.append(
            {
                "path": rel,
                "label": code.label,
                "template_id": tid,
                "augmentation": "none",
            }
        )

    p_orig = default_original_params(
        seed=derive_seed(root, "acquire", index, "original"),
        plane_jitter=config.plane_jitter,
    )
    ink = print_template(t, p_orig, template_id=tid)
    original = acquire(ink, p_orig, "original")
    emit(original)

    if config.physical_refs:
        # Second independent shot of the same printed item.
        p_ref = replace(p_orig, seed=derive_seed(root, "acquire", index, "physref"))
        emit(acquire(ink, p_ref, "physical_reference"))

    for family in ("fake1", "fake2"):
        for substrate in ("white", "gray"):
            attack = default_attack_params(
                family,
                substrate,
                seed=derive_seed(root, "attack", index, f"{family}_{substrate}"),
                plane_jitter=config.plane_jitter,
            )
            emit(copy_attack(original, attack))
    return rows


def _synthesize_worker(args) -> list:
    config_dict, index, out_dir = args
    return _synthesize_template(DatasetConfig.from_dict(config_dict), index, Path(out_dir))


def synthesize_dataset(
    config: DatasetConfig, out_dir: Union[str, Path], jobs: int = 1
) -> DatasetManifest:
    """Write templates, codes, and manifest.json under out_dir. Deterministic."""
    out = Path(out_dir)
    (out / "templates").mkdir(parents=True, exist_ok=True)
    (out / "codes").mkdir(parents=True, exist_ok=True)

    indices = range(config.n_templates)
    if jobs > 1:
        args = [(config.to_dict(), i, str(out)) for i in indices]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_template = list(pool.map(_synthesize_worker, args))
    else:
        per_template = [_synthesize_template(config, i, out) for i in indices]

    template_ids = tuple(_template_id(i) for i in indices)
    assignment = split_by_template(template_ids, config.seed)
    codes = []
    for rows in per_template:
        for row in rows:
            codes.append({**row, "split": assignment[row["template_id"]]})

    manifest = DatasetManifest(
        config=config,
        config_hash=config_hash(config),
        template_ids=template_ids,
        codes=codes,
    )
    write_json(
        out / "manifest.json",
        {
            "config": config.to_dict(),
            "config_hash": manifest.config_hash,
            "seed": config.seed,
            "template_ids": list(template_ids),
            "codes": codes,
        },
    )
    return manifest


def load_manifest(dataset_dir: Union[str, Path]) -> DatasetManifest:
    obj = read_json(Path(dataset_dir) / "manifest.json")
    config = DatasetConfig.from_dict(obj["config"])
    manifest = DatasetManifest(
        config=config,
        config_hash=obj["config_hash"],
        template_ids=tuple(obj["template_ids"]),
        codes=list(obj["codes"]),
    )
    if manifest.config_hash != config_hash(config):
        raise DataError("manifest config hash does not match its config")
    originals = {e["template_id"] for e in manifest.codes if e["label"] == "original"}
    for entry in manifest.codes:
        if entry["template_id"] not in originals:
            raise DataError(f"{entry['path']}: template has no original code")
    return manifest


@dataclass
class Dataset:
    """Manifest plus loaded templates and codes, keyed for the protocols."""

    manifest: DatasetManifest
    dataset_dir: Optional[Path] = None
    templates: dict = field(default_factory=dict)  # template_id -> Template
    codes: dict = field(default_factory=dict)  # (template_id, label) -> ObservedCode

    @property
    def template_ids(self) -> tuple:
        return self.manifest.template_ids


def load_dataset(dataset_dir: Union[str, Path]) -> Dataset:
    root = Path(dataset_dir)
    manifest = load_manifest(root)
    data = Dataset(manifest=manifest, dataset_dir=root)
    for tid in manifest.template_ids:
        data.templates[tid] = load_template(root / "templates" / tid)
    for entry in manifest.codes:
        data.codes[(entry["template_id"], entry["label"])] = load_observed(
            root / entry["path"]
        )
    return data


# ---------------------------------------------------------------------------
# splits and augmentation


def split_by_template(template_ids: Sequence[str], seed: int) -> dict:
    """40/10/50 train/val/test assignment; every code of a template follows it."""
    ids = list(template_ids)
    n = len(ids)
    if n < 3:
        raise ParameterError("need at least 3 templates to split")
    n_train = round(SPLIT_FRACTIONS["train"] * n)
    n_val = max(1, round(SPLIT_FRACTIONS["val"] * n))
    order = rng_for(seed, "split").permutation(n)
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            part = "train"
        elif rank < n_train + n_val:
            part = "val"
        else:
            part = "test"
        assignment[ids[idx]] = part
    return assignment


def _rot_k(tag: str) -> int:
    try:
        return {"rot90": 1, "rot180": 2, "rot270": 3}[tag]
    except KeyError:
        raise ParameterError(f"unknown rotation tag {tag!r}") from None


def augment_image(image: np.ndarray, tag: str) -> np.ndarray:
    if tag == "identity":
        return image.copy()
    if tag.startswith("rot"):
        return np.ascontiguousarray(np.rot90(image, k=_rot_k(tag), axes=(0, 1)))
    if tag.startswith("gamma-"):
        return image ** float(tag.split("-", 1)[1])
    raise ParameterError(f"unknown augmentation tag {tag!r}")


def augment_symbols(symbols: np.ndarray, tag: str) -> np.ndarray:
    """Symbol grid matching an augmented image (rotations rotate the grid)."""
    if tag.startswith("rot"):
        return np.ascontiguousarray(np.rot90(symbols, k=_rot_k(tag)))
    return symbols


def augment(code: ObservedCode) -> list:
    """The 12 training variants of a code (identity, 3 rotations, 8 gammas).

    Variants are not composed. Rotations turn the image (and color planes)
    in-plane; pair them with augment_symbols for template-supervised models.
    """
    out = []
    for tag in AUGMENT_TAGS:
        image = augment_image(code.image, tag)
        planes = None if code.planes is None else augment_image(code.planes, tag)
        out.append(
            replace(
                code,
                image=image,
                planes=planes,
                params={**code.params, "augmentation": tag},
            )
        )
    return out


# ---------------------------------------------------------------------------
# error reports


@dataclass
class ErrorReport:
    """Per-setup, per-class rate summary over R runs.

    rows hold rates (p_miss / p_fa / p_e, all in [0, 1]); extras hold the
    remaining per-run scalars (selected nu values, MI estimates).
    """

    preset: str
    runs: int
    seed: int
    dataset_hash: str
    rows: list  # {setup, class_label, metric, mean, std, per_run}
    extras: dict = field(default_factory=dict)  # name -> {mean, std, per_run}

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "runs": self.runs,
            "seed": self.seed,
            "dataset_hash": self.dataset_hash,
            "rows": self.rows,
            "extras": self.extras,
        }

    def row(self, setup: str, class_label: str) -> dict:
        for entry in self.rows:
            if entry["setup"] == setup and entry["class_label"] == class_label:
                return entry
        raise KeyError((setup, class_label))


def _mean_std(values: Sequence[float]) -> dict:
    arr = np.array(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=0)),
        "per_run": [float(v) for v in arr],
    }


def _aggregate_rates(per_run: list) -> list:
    keys = list(per_run[0])
    for rates in per_run[1:]:
        if list(rates) != keys:
            raise DataError("runs produced different row sets")
    rows = []
    for key in keys:
        setup, class_label, metric = key
        rows.append(
            {
                "setup": setup,
                "class_label": class_label,
                "metric": metric,
                **_mean_std([rates[key] for rates in per_run]),
            }
        )
    return rows


def _aggregate_extras(per_run: list) -> dict:
    keys = list(per_run[0])
    for extras in per_run[1:]:
        if list(extras) != keys:
            raise DataError("runs produced different extras sets")
    return {key: _mean_std([extras[key] for extras in per_run]) for key in keys}


def write_report_json(report: ErrorReport, path: Union[str, Path]) -> None:
    write_json(path, report.to_dict())


def write_runs_csv(report: ErrorReport, path: Union[str, Path]) -> None:
    """Per-run values behind every aggregated number, one value per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "setup", "class_label", "metric", "value"])
        for entry in report.rows:
            for run_idx, value in enumerate(entry["per_run"]):
                writer.writerow(
                    [run_idx, entry["setup"], entry["class_label"], entry["metric"], repr(value)]
                )
        for name, agg in report.extras.items():
            for run_idx, value in enumerate(agg["per_run"]):
                writer.writerow([run_idx, "extras", name, "value", repr(value)])


def write_report_markdown(report: ErrorReport, path: Union[str, Path]) -> None:
    """Rate tables in percent, one table per setup, classes as columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    setups = []
    for entry in report.rows:
        if entry["setup"] not in setups:
            setups.append(entry["setup"])
    lines = [f"# Report: {report.preset}", ""]
    lines.append(f"Runs: {report.runs}; seed: {report.seed}; dataset: {report.dataset_hash}")
    lines.append("")
    lines.append("All rates in percent, mean (±std) over runs.")
    lines.append("")
    for setup in setups:
        entries = [e for e in report.rows if e["setup"] == setup]
        header = [f"{e['class_label']} ({e['metric']})" for e in entries]
        cells = [f"{100 * e['mean']:.2f} (±{100 * e['std']:.2f})" for e in entries]
        lines.append(f"## {setup}")
        lines.append("")
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    if report.extras:
        lines.append("## extras")
        lines.append("")
        for name, agg in report.extras.items():
            lines.append(f"- {name}: {agg['mean']:.6g} (±{agg['std']:.6g})")
        lines.append("")
    path.write_text("\n".join(lines))


# ---------------------------------------------------------------------------
# shared evaluation helpers


def codes_in_split(data: Dataset, assignment: dict, split: str, labels) -> list:
    wanted = set(labels)
    out = []
    for entry in data.manifest.codes:
        if entry["label"] in wanted and assignment[entry["template_id"]] == split:
            out.append(data.codes[(entry["template_id"], entry["label"])])
    return out


def _rates_from_accepts(codes: Sequence[ObservedCode], accepted: np.ndarray) -> dict:
    """P_miss over originals and per-fake-class P_fa from accept decisions."""
    labels = np.array([c.label for c in codes])
    rates = {}
    orig = labels == "original"
    if orig.any():
        rates[("originals", "p_miss")] = float(1.0 - accepted[orig].mean())
    for fake in FAKE_LABELS:
        mask = labels == fake
        if mask.any():
            rates[(fake, "p_fa")] = float(accepted[mask].mean())
    return rates


# ---------------------------------------------------------------------------
# preset runners; each returns (rates, extras) for one run


def _supervised_features(codes: Sequence[ObservedCode], augmented: bool) -> tuple:
    images = []
    names = []
    for code in codes:
        variants = augment(code) if augmented else [code]
        for var in variants:
            images.append(var.image)
            names.append(code.label)
    return images_to_features(images), names


def _run_supervised_5class(data: Dataset, assignment: dict, run_seed: int) -> tuple:
    train_codes = codes_in_split(data, assignment, "train", CLASS_ORDER)
    test_codes = codes_in_split(data, assignment, "test", CLASS_ORDER)
    index = {label: i for i, label in enumerate(CLASS_ORDER)}

    x_train, names = _supervised_features(train_codes, augmented=True)
    y_train = np.array([index[n] for n in names])
    model = train_classifier(
        x_train,
        y_train,
        n_classes=5,
        config=TrainConfig(seed=derive_seed(run_seed, "classifier")),
        class_names=CLASS_ORDER,
    )
    x_test, test_names = _supervised_features(test_codes, augmented=False)
    y_test = np.array([index[n] for n in test_names])
    pred, logp = predict(model, x_test)

    groupings = {
        "5-class": (np.arange(5), ("originals",) + FAKE_LABELS),
        "3-class": (np.array([0, 1, 1, 2, 2]), ("originals", "fakes1", "fakes2")),
        "2-class": (np.array([0, 1, 1, 1, 1]), ("originals", "fakes")),
    }
    rates = {}
    for setup, (mapping, names_g) in groupings.items():
        true_g = mapping[y_test]
        pred_g = mapping[pred]
        for class_idx, class_name in enumerate(names_g):
            mask = true_g == class_idx
            metric = "p_miss" if class_name == "originals" else "p_e"
            rates[(setup, class_name, metric)] = float((pred_g[mask] != class_idx).mean())
    mi = estimate_mi_lower_bound(y_test, logp)
    extras = {"mi_lower_bound_nats": mi.lower_bound}
    return rates, extras


def _run_supervised_binary(data: Dataset, assignment: dict, run_seed: int) -> tuple:
    rates = {}
    test_codes = codes_in_split(data, assignment, "test", CLASS_ORDER)
    x_test, test_names = _supervised_features(test_codes, augmented=False)
    test_labels = np.array(test_names)
    for fake in FAKE_LABELS:
        train_codes = codes_in_split(data, assignment, "train", ("original", fake))
        x_train, names = _supervised_features(train_codes, augmented=True)
        y_train = np.array([0 if n == "original" else 1 for n in names])
        model = train_classifier(
            x_train,
            y_train,
            n_classes=2,
            config=TrainConfig(seed=derive_seed(run_seed, "binary", fake)),
            class_names=("original", fake),
        )
        pred, _ = predict(model, x_test)
        decided_original = pred == 0
        setup = f"trained-vs-{fake}"
        orig_mask = test_labels == "original"
        rates[(setup, "originals", "p_miss")] = float(
            1.0 - decided_original[orig_mask].mean()
        )
        for probe_fake in FAKE_LABELS:
            mask = test_labels == probe_fake
            rates[(setup, probe_fake, "p_fa")] = float(decided_original[mask].mean())
    return rates, {}


OCSVM_SPATIAL_VARIANTS = (
    ("digital", "gray"),
    ("digital", "rgb"),
    ("physical", "gray"),
    ("physical", "rgb"),
)


def spatial_pair_features(
    data: Dataset, codes: Sequence[ObservedCode], reference: str, color: str
) -> np.ndarray:
    """(pearson, hamming) rows for codes against digital or physical references."""
    use_planes = color == "rgb"
    out = np.empty((len(codes), 2))
    for i, code in enumerate(codes):
        if reference == "digital":
            ref = data.templates[code.template_id]
        else:
            ref = data.codes.get((code.template_id, "physical_reference"))
            if ref is None:
                raise DataError(f"{code.template_id}: no physical reference enrolled")
        fv = feature_vector(code, ref, use_planes=use_planes)
        out[i] = (fv.pearson, fv.hamming_sym)
    return out


def _run_ocsvm_spatial(
    data: Dataset, assignment: dict, run_seed: int, variants=OCSVM_SPATIAL_VARIANTS
) -> tuple:
    rates = {}
    extras = {}
    test_codes = codes_in_split(data, assignment, "test", CLASS_ORDER)
    for reference, color in variants:
        if color == "rgb" and data.manifest.config.plane_jitter == 0:
            raise ParameterError("rgb variant needs a dataset with color planes")
        train = spatial_pair_features(
            data,
            codes_in_split(data, assignment, "train", ("original",)),
            reference,
            color,
        )
        val = spatial_pair_features(
            data, codes_in_split(data, assignment, "val", ("original",)), reference, color
        )
        model, nu, _ = select_nu(train, val)
        feats = spatial_pair_features(data, test_codes, reference, color)
        accepted = rule_ocsvm(model, feats)
        setup = f"{reference}-{color}"
        for (class_label, metric), value in _rates_from_accepts(
            test_codes, accepted
        ).items():
            rates[(setup, class_label, metric)] = value
        val_accept = rule_ocsvm(model, val)
        rates[(setup, "originals-val", "p_miss")] = float(1.0 - val_accept.mean())
        extras[f"{setup}/selected_nu"] = nu
    return rates, extras


def ae_training_arrays(data: Dataset, assignment: dict) -> tuple:
    """Augmented train-split originals with matching (rotated) symbol grids."""
    images, symbols = [], []
    for code in codes_in_split(data, assignment, "train", ("original",)):
        grid = data.templates[code.template_id].symbols
        for tag in AUGMENT_TAGS:
            images.append(augment_image(code.image, tag))
            symbols.append(augment_symbols(grid, tag))
    return np.stack(images), np.stack(symbols)


def deep_features(data: Dataset, model, codes: Sequence[ObservedCode]) -> dict:
    images = np.stack([c.image for c in codes])
    symbols = np.stack([data.templates[c.template_id].symbols for c in codes])
    return extract_features_batch(model, images, symbols)


def _run_deep(
    data: Dataset,
    assignment: dict,
    run_seed: int,
    scenario: int,
    ae_config: Optional[AeConfig] = None,
) -> tuple:
    images, symbols = ae_training_arrays(data, assignment)
    base = ae_config if ae_config is not None else AeConfig()
    model = train_ae(images, symbols, scenario, replace(base, seed=derive_seed(run_seed, "ae")))

    val_codes = codes_in_split(data, assignment, "val", ("original",))
    test_codes = codes_in_split(data, assignment, "test", CLASS_ORDER)
    val_feats = deep_features(data, model, val_codes)
    test_feats = deep_features(data, model, test_codes)

    rates = {}
    extras = {}

    def record(rule: str, accepted: np.ndarray, val_accepted: np.ndarray) -> None:
        setup = f"scenario-{scenario}/rule-{rule}"
        for (class_label, metric), value in _rates_from_accepts(
            test_codes, accepted
        ).items():
            rates[(setup, class_label, metric)] = value
        rates[(setup, "originals-val", "p_miss")] = float(1.0 - val_accepted.mean())

    thr1 = calibrate(val_feats["hamming_sym"])
    record(
        "one",
        rule_one_metric(test_feats["hamming_sym"], thr1.gamma1),
        rule_one_metric(val_feats["hamming_sym"], thr1.gamma1),
    )

    if test_feats["recon_l2"] is not None:
        thr2 = calibrate(val_feats["hamming_sym"], val_feats["recon_l2"])
        record(
            "two",
            rule_two_metric(test_feats["hamming_sym"], test_feats["recon_l2"], thr2),
            rule_two_metric(val_feats["hamming_sym"], val_feats["recon_l2"], thr2),
        )
        record(
            "two-any",
            rule_two_metric(test_feats["hamming_sym"], test_feats["recon_l2"], thr2, mode="any"),
            rule_two_metric(val_feats["hamming_sym"], val_feats["recon_l2"], thr2, mode="any"),
        )
        train_codes = codes_in_split(data, assignment, "train", ("original",))
        train_feats = deep_features(data, model, train_codes)
        train_x = np.column_stack([train_feats["hamming_sym"], train_feats["recon_l2"]])
        val_x = np.column_stack([val_feats["hamming_sym"], val_feats["recon_l2"]])
        test_x = np.column_stack([test_feats["hamming_sym"], test_feats["recon_l2"]])
        svm, nu, _ = select_nu(train_x, val_x)
        record("ocsvm", rule_ocsvm(svm, test_x), rule_ocsvm(svm, val_x))
        extras[f"scenario-{scenario}/rule-ocsvm/selected_nu"] = nu
    return rates, extras


# ---------------------------------------------------------------------------
# presets and the runner


def _deep_runner(scenario: int):
    def run(data, assignment, run_seed, ae_config=None):
        return _run_deep(data, assignment, run_seed, scenario, ae_config)

    return run


def _ocsvm_runner(reference: str, color: str):
    def run(data, assignment, run_seed, ae_config=None):
        return _run_ocsvm_spatial(data, assignment, run_seed, ((reference, color),))

    return run


PRESETS = {
    "supervised-5class": lambda d, a, s, ae_config=None: _run_supervised_5class(d, a, s),
    "supervised-binary-per-fake": lambda d, a, s, ae_config=None: _run_supervised_binary(d, a, s),
    "ocsvm-spatial": lambda d, a, s, ae_config=None: _run_ocsvm_spatial(d, a, s),
    "ocsvm-spatial-digital-gray": _ocsvm_runner("digital", "gray"),
    "ocsvm-spatial-digital-rgb": _ocsvm_runner("digital", "rgb"),
    "ocsvm-spatial-physical-gray": _ocsvm_runner("physical", "gray"),
    "ocsvm-spatial-physical-rgb": _ocsvm_runner("physical", "rgb"),
    "deep-scenario-1": _deep_runner(1),
    "deep-scenario-2": _deep_runner(2),
    "deep-scenario-3": _deep_runner(3),
    "deep-scenario-4": _deep_runner(4),
}


def _single_run(data: Dataset, preset: str, run_seed: int, ae_config) -> tuple:
    assignment = split_by_template(data.template_ids, run_seed)
    return PRESETS[preset](data, assignment, run_seed, ae_config=ae_config)


def _run_worker(args) -> tuple:
    dataset_dir, preset, run_seed, ae_config = args
    return _single_run(load_dataset(dataset_dir), preset, run_seed, ae_config)


def run_experiment(
    dataset: Union[Dataset, str, Path],
    preset: str,
    runs: int = 5,
    seed: int = 0,
    out_dir: Optional[Union[str, Path]] = None,
    ae_config: Optional[AeConfig] = None,
    jobs: int = 1,
) -> ErrorReport:
    """Repeat a preset over fresh splits and aggregate the rates.

    Each run r resplits by template with a seed derived from (seed, r); all
    model seeds derive from the run seed, so the report is reproducible byte
    for byte, sequential or parallel. When out_dir is given, writes
    report.json, report.md and runs.csv there.
    """
    if preset not in PRESETS:
        raise ParameterError(
            f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}"
        )
    if runs < 1:
        raise ParameterError("runs must be positive")
    data = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    run_seeds = [derive_seed(seed, "run", r) for r in range(runs)]

    if jobs > 1 and runs > 1 and data.dataset_dir is not None:
        args = [(str(data.dataset_dir), preset, rs, ae_config) for rs in run_seeds]
        with ProcessPoolExecutor(max_workers=min(jobs, runs)) as pool:
            results = list(pool.map(_run_worker, args))
    else:
        results = [_single_run(data, preset, rs, ae_config) for rs in run_seeds]

    report = ErrorReport(
        preset=preset,
        runs=runs,
        seed=seed,
        dataset_hash=data.manifest.config_hash,
        rows=_aggregate_rates([rates for rates, _ in results]),
        extras=_aggregate_extras([extras for _, extras in results]),
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report_json(report, out / "report.json")
        write_report_markdown(report, out / "report.md")
        write_runs_csv(report, out / "runs.csv")
    return report


# ---------------------------------------------------------------------------
# embedding export


def pca_embed(features: np.ndarray, dims: int = 2) -> np.ndarray:
    """Mean-centered projection onto the top principal directions.

    Sign convention: each direction's largest-magnitude loading is positive.
    Degenerate covariance (rank < dims) reduces the output width with a
    warning instead of fabricating directions.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("features must be a 2-D matrix")
    n, d = x.shape
    if dims < 1:
        raise ParameterError("dims must be positive")
    if n < dims:
        raise DataError(f"need at least {dims} samples for {dims} dimensions")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    tol = max(n, d) * np.finfo(np.float64).eps * max(float(eigvals[0]), 1.0)
    rank = int((eigvals > tol).sum())
    keep = min(dims, rank)
    if keep < dims:
        warnings.warn(
            f"covariance rank {rank} < requested dims {dims}; returning {keep} dims",
            stacklevel=2,
        )
    vecs = eigvecs[:, :keep]
    flips = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(keep)])
    flips[flips == 0] = 1.0
    return centered @ (vecs * flips)


def spatial_feature_table(
    data: Dataset, reference: str = "digital", use_planes: bool = False
) -> tuple:
    """Full-metric rows for every non-reference code; returns (rows, codes).

    Each row is (template_id, label, split, pearson, hamming_sym, l1, l2).
    """
    rows = []
    used = []
    for entry in data.manifest.codes:
        if entry["label"] == "physical_reference":
            continue
        code = data.codes[(entry["template_id"], entry["label"])]
        if reference == "digital":
            ref = data.templates[code.template_id]
        else:
            ref = data.codes.get((code.template_id, "physical_reference"))
            if ref is None:
                raise DataError(f"{code.template_id}: no physical reference enrolled")
        fv = feature_vector(code, ref, use_planes=use_planes)
        rows.append(
            (
                entry["template_id"],
                entry["label"],
                entry["split"],
                fv.pearson,
                fv.hamming_sym,
                fv.l1,
                fv.l2,
            )
        )
        used.append(code)
    return rows, used


def write_features_csv(
    path: Union[str, Path],
    data: Dataset,
    reference: str = "digital",
    use_planes: bool = False,
) -> list:
    """Per-code spatial metrics vs the chosen reference; returns the codes used."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, used = spatial_feature_table(data, reference, use_planes)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["template_id", "label", "split", "pearson", "hamming_sym", "l1", "l2"]
        )
        for tid, label, split, p, h, l1, l2 in rows:
            writer.writerow([tid, label, split, repr(p), h, repr(l1), repr(l2)])
    return used


def write_embedding_csv(
    path: Union[str, Path], embedding: np.ndarray, codes: Sequence[ObservedCode]
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["template_id", "label"] + [f"dim{i}" for i in range(embedding.shape[1])]
        )
        for code, row in zip(codes, embedding):
            writer.writerow([code.template_id, code.label] + [repr(float(v)) for v in row])
