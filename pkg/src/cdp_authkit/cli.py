"""Command-line entry point wiring templates, channel, models, and reports.

One executable with subcommands covering the full workflow: generate
templates, synthesize a benchmark dataset, export spatial metrics, train the
three model families, calibrate decision thresholds, run preset experiments,
render reports, export embeddings, benchmark, and self-test against the
built-in oracles.

Configuration comes from an optional JSON file (--config) overridden by
flags; the seed additionally honors the CDP_AUTHKIT_SEED environment
variable between the two. Unknown config keys are rejected. All outputs are
byte-deterministic for a given seed; wall-clock timestamps appear only in
the optional --log file. Exit codes: 0 success, 1 validation error, 2
runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .channel import AttackParams, acquire, estimate_template_binary, print_template, strong_dot_gain_params
from .decision import calibrate, rule_one_metric
from .deepfeat import AeConfig, build_ae_model, gradient_check, load_ae, save_ae, train_ae
from .errors import ParameterError
from .imageio import read_json, write_json
from .metrics import otsu_threshold, pearson
from .nn import Dense
from .ocsvm import decision_function, dual_objective, save_model, select_nu, train_ocsvm
from .oracles import (
    hamming_naive,
    lp_naive,
    ocsvm_kkt_violation,
    otsu_exhaustive,
    pearson_naive,
    pgd_dual,
)
from .rng import derive_seed, rng_for
from .supervised import (
    TrainConfig,
    _ce_loss_and_grads,
    estimate_mi_lower_bound,
    save_classifier,
    train_classifier,
)
from .template import Template, add_markers, generate_template, save_template, upsample_symbols
from .experiment import (
    PRESETS,
    DatasetConfig,
    ErrorReport,
    ae_training_arrays,
    codes_in_split,
    deep_features,
    load_dataset,
    pca_embed,
    run_experiment,
    spatial_pair_features,
    spatial_feature_table,
    synthesize_dataset,
    write_embedding_csv,
    write_features_csv,
    write_report_markdown,
)
from .metrics import lp_distances, hamming_symbols

LOG = logging.getLogger("cdp_authkit.cli")

TOP_KEYS = {"seed", "out_dir", "jobs", "template", "dataset", "model", "experiment"}

SECTION_KEYS = {
    "template": {"count", "n_sym", "symbol_px", "black_fraction", "marker_width"},
    "dataset": {
        "templates",
        "n_sym",
        "symbol_px",
        "black_fraction",
        "physical_refs",
        "plane_jitter",
    },
    "model": {
        "nu",
        "rbf_gamma",
        "reference",
        "color",
        "epochs",
        "batch_size",
        "lr",
        "hidden",
        "scenario",
        "channels",
        "disc_hidden",
        "lambda1",
        "lambda2",
        "beta",
    },
    "experiment": {"preset", "runs"},
}

AE_KEYS = ("epochs", "batch_size", "lr", "lambda1", "lambda2", "beta", "channels", "disc_hidden")


class CliParser(argparse.ArgumentParser):
    """Parser whose usage errors exit with status 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        obj = read_json(path)
    except (OSError, ValueError) as exc:
        raise ParameterError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParameterError("config file must hold a JSON object")
    unknown = set(obj) - TOP_KEYS
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in SECTION_KEYS.items():
        sec = obj.get(section, {})
        if not isinstance(sec, dict):
            raise ParameterError(f"config section {section!r} must be an object")
        bad = set(sec) - allowed
        if bad:
            raise ParameterError(f"unknown keys in config section {section!r}: {sorted(bad)}")
    return obj


def _opt(flag_value, config: dict, section: str, key: str, default):
    """Flag > config section > default."""
    if flag_value is not None:
        return flag_value
    return config.get(section, {}).get(key, default)


def _seed(args, config: dict) -> int:
    """Flag > CDP_AUTHKIT_SEED > config > 0."""
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CDP_AUTHKIT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ParameterError("CDP_AUTHKIT_SEED must be an integer") from exc
    return int(config.get("seed", 0))


def _jobs(args, config: dict) -> int:
    if args.jobs is not None:
        return args.jobs
    return int(config.get("jobs", os.cpu_count() or 1))


def _out_path(args, config: dict, default_name: str) -> Path:
    if getattr(args, "out", None) is not None:
        return Path(args.out)
    return Path(config.get("out_dir", ".")) / default_name


def _manifest_assignment(data) -> dict:
    """The split stored in the manifest (written at synthesis time)."""
    return {e["template_id"]: e["split"] for e in data.manifest.codes}


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args, config) -> int:
    seed = _seed(args, config)
    count = _opt(args.count, config, "template", "count", 1)
    n_sym = _opt(args.n_sym, config, "template", "n_sym", 24)
    symbol_px = _opt(args.symbol_px, config, "template", "symbol_px", 3)
    black = _opt(args.black_fraction, config, "template", "black_fraction", 0.5)
    marker = _opt(args.marker_width, config, "template", "marker_width", 0)
    out = _out_path(args, config, "templates")
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        t = generate_template(n_sym, symbol_px, black, derive_seed(seed, "template", i))
        if marker:
            t = add_markers(t, marker)
        save_template(t, out / f"t{i:04d}")
    print(f"wrote {count} templates ({n_sym}x{n_sym} symbols at {symbol_px}px) -> {out}")
    return 0


def cmd_dataset(args, config) -> int:
    cfg = DatasetConfig(
        n_templates=_opt(args.templates, config, "dataset", "templates", 300),
        n_sym=_opt(args.n_sym, config, "dataset", "n_sym", 24),
        symbol_px=_opt(args.symbol_px, config, "dataset", "symbol_px", 3),
        black_fraction=_opt(args.black_fraction, config, "dataset", "black_fraction", 0.5),
        physical_refs=_opt(args.physical_refs, config, "dataset", "physical_refs", True),
        plane_jitter=_opt(args.plane_jitter, config, "dataset", "plane_jitter", 0.03),
        seed=_seed(args, config),
    )
    out = _out_path(args, config, "dataset")
    manifest = synthesize_dataset(cfg, out, jobs=_jobs(args, config))
    print(
        f"manifest {manifest.config_hash}: {cfg.n_templates} templates, "
        f"{len(manifest.codes)} codes -> {out}"
    )
    return 0


def cmd_metrics(args, config) -> int:
    data = load_dataset(args.dataset)
    out = Path(args.out) if args.out is not None else Path(args.dataset) / "features.csv"
    used = write_features_csv(out, data, reference=args.reference, use_planes=args.use_planes)
    print(f"wrote {len(used)} metric rows ({args.reference} reference) -> {out}")
    return 0


def cmd_train(args, config) -> int:
    seed = _seed(args, config)
    data = load_dataset(args.dataset)
    assignment = _manifest_assignment(data)

    if args.kind == "ocsvm":
        reference = _opt(args.reference, config, "model", "reference", "digital")
        color = _opt(args.color, config, "model", "color", "gray")
        rbf_gamma = _opt(args.rbf_gamma, config, "model", "rbf_gamma", 0.1)
        nu = _opt(args.nu, config, "model", "nu", None)
        train = spatial_pair_features(
            data, codes_in_split(data, assignment, "train", ("original",)), reference, color
        )
        val = spatial_pair_features(
            data, codes_in_split(data, assignment, "val", ("original",)), reference, color
        )
        if nu is None:
            model, nu, _ = select_nu(train, val, rbf_gamma=rbf_gamma)
        else:
            model = train_ocsvm(train, nu=nu, rbf_gamma=rbf_gamma)
        val_miss = float(np.mean(decision_function(model, val) < 0.0))
        out = _out_path(args, config, "model-ocsvm.json")
        out.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, out)
        print(
            f"one-class svm ({reference}-{color}): nu={nu} support={len(model.alphas)} "
            f"val-miss={val_miss:.6f} -> {out}"
        )
        return 0

    if args.kind == "supervised":
        from .experiment import CLASS_ORDER, _supervised_features

        cfg = TrainConfig(
            epochs=_opt(args.epochs, config, "model", "epochs", 40),
            batch_size=_opt(args.batch_size, config, "model", "batch_size", 32),
            lr=_opt(args.lr, config, "model", "lr", 0.05),
            hidden=_opt(args.hidden, config, "model", "hidden", 128),
            seed=seed,
        )
        train_codes = codes_in_split(data, assignment, "train", CLASS_ORDER)
        x, names = _supervised_features(train_codes, augmented=True)
        index = {label: i for i, label in enumerate(CLASS_ORDER)}
        y = np.array([index[n] for n in names])
        model = train_classifier(x, y, n_classes=5, config=cfg, class_names=CLASS_ORDER)
        out = _out_path(args, config, "model-supervised.json")
        out.parent.mkdir(parents=True, exist_ok=True)
        save_classifier(model, out)
        print(f"classifier: {cfg.epochs} epochs, final loss {model.final_loss:.6f} -> {out}")
        return 0

    # autoencoder
    scenario = _opt(args.scenario, config, "model", "scenario", None)
    if scenario is None:
        raise ParameterError("train ae requires --scenario (1..4)")
    cfg = AeConfig(
        epochs=_opt(args.epochs, config, "model", "epochs", 30),
        batch_size=_opt(args.batch_size, config, "model", "batch_size", 16),
        lr=_opt(args.lr, config, "model", "lr", 1e-3),
        lambda1=_opt(args.lambda1, config, "model", "lambda1", 1.0),
        lambda2=_opt(args.lambda2, config, "model", "lambda2", 1.0),
        beta=_opt(args.beta, config, "model", "beta", 0.01),
        channels=_opt(args.channels, config, "model", "channels", 8),
        disc_hidden=_opt(args.disc_hidden, config, "model", "disc_hidden", 64),
        seed=seed,
    )
    images, symbols = ae_training_arrays(data, assignment)
    model = train_ae(images, symbols, scenario, cfg)
    out = _out_path(args, config, f"model-ae-s{scenario}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_ae(model, out)
    print(
        f"autoencoder scenario {scenario}: {cfg.epochs} epochs, "
        f"final loss {model.loss_trace['total'][-1]:.6f} -> {out}"
    )
    return 0


def cmd_calibrate(args, config) -> int:
    data = load_dataset(args.dataset)
    model = load_ae(args.model)
    assignment = _manifest_assignment(data)
    val_codes = codes_in_split(data, assignment, "val", ("original",))
    feats = deep_features(data, model, val_codes)
    # models without a decoder calibrate the hamming threshold alone
    thr = calibrate(feats["hamming_sym"], feats.get("recon_l2"))
    out = _out_path(args, config, "thresholds.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, {"kind": "thresholds", **thr.to_dict()})
    print(
        f"calibrated on {len(val_codes)} validation originals: "
        f"gamma1={thr.gamma1} gamma2={thr.gamma2!r} -> {out}"
    )
    return 0


def cmd_eval(args, config) -> int:
    preset = _opt(args.preset, config, "experiment", "preset", None)
    if preset is None:
        raise ParameterError("eval requires --preset")
    runs = _opt(args.runs, config, "experiment", "runs", 5)
    overrides = dict(
        (k, v) for k, v in config.get("model", {}).items() if k in AE_KEYS
    )
    for key in AE_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    ae_config = AeConfig(**overrides) if overrides else None
    out = _out_path(args, config, f"report-{preset}")
    report = run_experiment(
        args.dataset,
        preset,
        runs=runs,
        seed=_seed(args, config),
        out_dir=out,
        ae_config=ae_config,
        jobs=_jobs(args, config),
    )
    for row in report.rows:
        print(
            f"{row['setup']} {row['class_label']} {row['metric']}: "
            f"mean {row['mean']:.6f} std {row['std']:.6f}"
        )
    for name, agg in report.extras.items():
        print(f"{name}: mean {agg['mean']:.6g} std {agg['std']:.6g}")
    print(f"report -> {out}")
    return 0


def cmd_report(args, config) -> int:
    obj = read_json(args.input)
    report = ErrorReport(
        preset=obj["preset"],
        runs=obj["runs"],
        seed=obj["seed"],
        dataset_hash=obj["dataset_hash"],
        rows=obj["rows"],
        extras=obj.get("extras", {}),
    )
    out = Path(args.out) if args.out is not None else Path(args.input).with_suffix(".md")
    write_report_markdown(report, out)
    print(out.read_text())
    return 0


def cmd_embed(args, config) -> int:
    data = load_dataset(args.dataset)
    rows, codes = spatial_feature_table(
        data, reference=args.reference, use_planes=args.use_planes
    )
    features = np.array([row[3:] for row in rows], dtype=np.float64)
    embedding = pca_embed(features, dims=args.dims)
    out = Path(args.out) if args.out is not None else Path(args.dataset) / "embedding.csv"
    write_embedding_csv(out, embedding, codes)
    print(f"wrote {embedding.shape[0]}x{embedding.shape[1]} embedding -> {out}")
    return 0


def cmd_bench(args, config) -> int:
    seed = _seed(args, config)
    rng = rng_for(seed, "bench")

    images = rng.random((200, 64, 64))
    t0 = time.perf_counter()
    for img in images:
        otsu_threshold(img)
    dt = time.perf_counter() - t0
    print(f"otsu 64x64: 200 images in {dt:.3f}s ({200 / dt:.0f}/s)")

    pairs = rng.random((200, 2, 64, 64))
    t0 = time.perf_counter()
    for a, b in pairs:
        pearson(a, b)
        lp_distances(a, b)
    dt = time.perf_counter() - t0
    print(f"intensity metrics 64x64: 200 pairs in {dt:.3f}s ({200 / dt:.0f}/s)")

    points = rng.normal(size=(200, 2))
    t0 = time.perf_counter()
    model = train_ocsvm(points, nu=0.1)
    dt = time.perf_counter() - t0
    print(f"ocsvm n=200: {model.iterations} pair updates in {dt:.3f}s")

    t = generate_template(12, 3, 0.5, derive_seed(seed, "bench-template"))
    imgs = np.stack(
        [
            acquire(print_template(t, strong_dot_gain_params(), "bench"),
                    strong_dot_gain_params(), "original").image
            for _ in range(8)
        ]
    )
    syms = np.stack([t.symbols] * 8)
    t0 = time.perf_counter()
    train_ae(imgs, syms, 1, AeConfig(epochs=1, batch_size=8, channels=4, seed=seed))
    dt = time.perf_counter() - t0
    print(f"ae epoch (8 images 36x36, 4 channels): {dt:.3f}s")
    return 0


# ---------------------------------------------------------------------------
# selftest suites


def _suite_otsu(rng) -> str:
    for i in range(200):
        side = int(rng.integers(4, 40))
        img = rng.random((side, side))
        if rng.random() < 0.2:
            img = np.round(img * 4) / 4  # heavy ties
        if otsu_threshold(img) != otsu_exhaustive(img):
            return f"mismatch on image {i}"
    return ""


def _suite_metric_oracles(rng) -> str:
    for i in range(200):
        a = rng.random((24, 24))
        b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
        if abs(pearson(a, b) - pearson_naive(a, b)) > 1e-12:
            return f"pearson mismatch on pair {i}"
        l1, l2 = lp_distances(a, b)
        n1, n2 = lp_naive(a, b)
        if abs(l1 - n1) > 1e-12 or abs(l2 - n2) > 1e-12:
            return f"lp mismatch on pair {i}"
    t = generate_template(8, 3, 0.5, 1)
    grid = (rng.random((24, 24)) < 0.5).astype(np.uint8)
    naive = hamming_naive((grid.reshape(8, 3, 8, 3).sum((1, 3)) * 2 >= 9), t.symbols)
    if hamming_symbols(grid, t) != naive:
        return "hamming mismatch"
    return ""


def _suite_ocsvm_dual(rng) -> str:
    for i in range(8):
        n = int(rng.integers(4, 9))
        pts = rng.normal(size=(n, 2))
        nu = float(rng.uniform(1.0 / n, 1.0))
        model = train_ocsvm(pts, nu=nu)
        if abs(model.alphas.sum() - 1.0) > 1e-8:
            return f"sum constraint violated on problem {i}"
        upper = 1.0 / (nu * n)
        if model.alphas.min() < -1e-8 or model.alphas.max() > upper + 1e-8:
            return f"box constraint violated on problem {i}"
        if ocsvm_kkt_violation(model, pts) > 1e-6:
            return f"kkt residual too large on problem {i}"
        z = model.standardize(pts)
        sq = ((z[:, None, :] - z[None, :, :]) ** 2).sum(-1)
        kernel = np.exp(-model.rbf_gamma * sq)
        oracle = pgd_dual([kernel], [upper])[0]
        if abs(dual_objective(model) - oracle) > 1e-6:
            return f"dual gap vs pgd oracle on problem {i}"
    return ""


def _suite_ocsvm_nu(rng) -> str:
    pts = rng.normal(size=(200, 2))
    for nu in (0.1, 0.5):
        model = train_ocsvm(pts, nu=nu)
        outliers = float(np.mean(decision_function(model, pts) < 0.0))
        sv_frac = len(model.alphas) / 200.0
        if outliers > nu + 0.02:
            return f"outlier fraction {outliers:.3f} above nu {nu}"
        if sv_frac < nu - 0.02:
            return f"sv fraction {sv_frac:.3f} below nu {nu}"
    return ""


def _suite_supervised_gradient(rng) -> str:
    hidden = Dense(rng_for(3, "h"), 6, 5)
    output = Dense(rng_for(3, "o"), 5, 3)
    x = rng.random((10, 6))
    y = rng.integers(0, 3, 10)
    _ce_loss_and_grads(hidden, output, x, y)
    ga = hidden.gw.copy()
    h = 1e-6
    for idx in [(0, 0), (3, 2), (5, 4)]:
        orig = hidden.w[idx]
        hidden.w[idx] = orig + h
        up = _ce_loss_and_grads(hidden, output, x, y)
        hidden.w[idx] = orig - h
        down = _ce_loss_and_grads(hidden, output, x, y)
        hidden.w[idx] = orig
        fd = (up - down) / (2 * h)
        if abs(fd - ga[idx]) > 1e-6 * max(1.0, abs(fd)):
            return f"hidden-layer gradient mismatch at {idx}"
    return ""


def _suite_ae_gradient(rng) -> str:
    cfg = AeConfig(epochs=1, batch_size=4, channels=2, disc_hidden=4, seed=9)
    model = build_ae_model(4, 4, 3, cfg)
    images = rng.random((4, 12, 12))
    symbols = (rng.random((4, 4, 4)) < 0.5).astype(np.uint8)
    worst = gradient_check(model, images, symbols)
    if worst > 1e-4:
        return f"relative error {worst:.2e}"
    return ""


def _suite_mi_bounds(rng) -> str:
    y = np.array([0, 1] * 50)
    perfect = np.full((100, 2), -np.inf)
    perfect[np.arange(100), y] = 0.0
    est = estimate_mi_lower_bound(y, perfect)
    if abs(est.lower_bound - math.log(2)) > 1e-9:
        return "perfect binary bound != ln 2"
    uniform = np.full((100, 2), math.log(0.5))
    est = estimate_mi_lower_bound(y, uniform)
    if abs(est.lower_bound - 0.0) > 1e-9:
        return "uniform bound != 0"
    for _ in range(200):
        k = int(rng.integers(2, 5))
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, k, n)
        p = rng.random((n, k)) + 1e-12
        p /= p.sum(axis=1, keepdims=True)
        est = estimate_mi_lower_bound(labels, np.log(p))
        if est.finite and est.lower_bound > est.h_c + 1e-12:
            return "bound exceeded H(C)"
    return ""


def _suite_decision(rng) -> str:
    for _ in range(200):
        gamma1 = int(rng.integers(0, 20))
        h = int(rng.integers(0, 40))
        accept = rule_one_metric(h, gamma1)
        if accept != (h <= gamma1):
            return f"boundary rule wrong at h={h} gamma1={gamma1}"
    val = rng.integers(0, 30, size=25)
    thr = calibrate(val)
    if rule_one_metric(val, thr.gamma1).mean() != 1.0:
        return "calibrated threshold misses validation points"
    if thr.gamma1 != int(val.max()):
        return "calibrated threshold not minimal"
    return ""


def _suite_asymmetry(rng) -> str:
    symbols = np.ones((15, 15), dtype=np.uint8)
    symbols[7, 7] = 0  # white symbol fully enclosed by ink
    symbols[:6, 9:] = 0  # substrate patch clear of the enclosed symbol
    symbols[3, 11] = 1  # isolated black symbol on substrate
    pixels = upsample_symbols(symbols, 3)
    t = Template(symbols=symbols, symbol_px=3, pixels=pixels, seed=0, marker_width_px=0)
    params = strong_dot_gain_params()
    observed = acquire(print_template(t, params, "asym"), params, "original")
    recovered = estimate_template_binary(
        observed, AttackParams(binarize_mode="otsu", morph_cleanup=False)
    )
    white_area = int((recovered[21:24, 21:24] == 0).sum())
    # window stays >=4px from any other ink, so all its ink is this symbol's
    black_area = int((recovered[5:16, 29:43] == 1).sum())
    if white_area != 0:
        return f"white symbol survived with area {white_area}"
    if black_area < 9:
        return f"black symbol shrank to area {black_area}"
    return ""


def _suite_seed_stability(rng) -> str:
    if derive_seed(0, "template", 0) != 12011422197716097752:
        return "derive_seed drifted"
    from .experiment import config_hash

    if config_hash(DatasetConfig()) != "8f2799fcc5659df2":
        return "dataset config hash drifted"
    return ""


SELFTEST_SUITES = (
    ("otsu-oracle", _suite_otsu),
    ("metric-oracles", _suite_metric_oracles),
    ("ocsvm-dual-oracle", _suite_ocsvm_dual),
    ("ocsvm-nu-property", _suite_ocsvm_nu),
    ("supervised-gradient", _suite_supervised_gradient),
    ("ae-gradient", _suite_ae_gradient),
    ("mi-bounds", _suite_mi_bounds),
    ("decision-rules", _suite_decision),
    ("channel-asymmetry", _suite_asymmetry),
    ("seed-stability", _suite_seed_stability),
)


def cmd_selftest(args, config) -> int:
    seed = _seed(args, config)
    failures = 0
    for name, suite in SELFTEST_SUITES:
        t0 = time.perf_counter()
        detail = suite(rng_for(seed, "selftest", name))
        LOG.info("selftest %s: %.2fs", name, time.perf_counter() - t0)
        if detail:
            failures += 1
            print(f"{name}: FAIL ({detail})")
        else:
            print(f"{name}: pass")
    if failures:
        print(f"{failures} of {len(SELFTEST_SUITES)} suites failed")
        return 2
    print(f"all {len(SELFTEST_SUITES)} suites passed")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> CliParser:
    parser = CliParser(prog="cdp-authkit", description=__doc__.splitlines()[0])
    common = CliParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="JSON config file; flags override it")
    common.add_argument("--seed", type=int, help="root seed (default: env, config, then 0)")
    common.add_argument("--jobs", type=int, help="parallel workers (default: config, then cores)")
    common.add_argument("--log", metavar="FILE", help="append timestamped progress to this file")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("gen", parents=[common], help="generate digital templates")
    p.add_argument("--count", type=int, help="number of templates (default 1)")
    p.add_argument("--n-sym", type=int, dest="n_sym", help="symbols per side (default 24)")
    p.add_argument("--symbol-px", type=int, dest="symbol_px", help="pixels per symbol (default 3)")
    p.add_argument("--black-fraction", type=float, dest="black_fraction", help="ink probability (default 0.5)")
    p.add_argument("--marker-width", type=int, dest="marker_width", help="corner marker width in px (default 0)")
    p.add_argument("--out", help="output directory (default <out_dir>/templates)")
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("dataset", parents=[common], help="synthesize a benchmark dataset")
    p.add_argument("--templates", type=int, help="template count (default 300)")
    p.add_argument("--n-sym", type=int, dest="n_sym", help="symbols per side (default 24)")
    p.add_argument("--symbol-px", type=int, dest="symbol_px", help="pixels per symbol (default 3)")
    p.add_argument("--black-fraction", type=float, dest="black_fraction", help="ink probability (default 0.5)")
    p.add_argument(
        "--physical-refs",
        action=argparse.BooleanOptionalAction,
        dest="physical_refs",
        default=None,
        help="enroll a second acquisition per original (default on)",
    )
    p.add_argument("--plane-jitter", type=float, dest="plane_jitter", help="color plane albedo jitter; 0 = grayscale (default 0.03)")
    p.add_argument("--out", help="dataset directory (default <out_dir>/dataset)")
    p.set_defaults(handler=cmd_dataset)

    p = sub.add_parser("metrics", parents=[common], help="export per-code spatial metrics as CSV")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--reference", choices=("digital", "physical"), default="digital")
    p.add_argument("--use-planes", action="store_true", dest="use_planes", help="average metrics over color planes")
    p.add_argument("--out", help="CSV path (default <dataset>/features.csv)")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("train", parents=[common], help="train a model on the stored split")
    p.add_argument("kind", choices=("ocsvm", "supervised", "ae"))
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", help="model JSON path (default <out_dir>/model-<kind>.json)")
    p.add_argument("--nu", type=float, help="ocsvm: fixed nu (default: validation grid search)")
    p.add_argument("--rbf-gamma", type=float, dest="rbf_gamma", help="ocsvm: kernel width (default 0.1)")
    p.add_argument("--reference", choices=("digital", "physical"), help="ocsvm: feature reference (default digital)")
    p.add_argument("--color", choices=("gray", "rgb"), help="ocsvm: feature channels (default gray)")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), help="ae: loss scenario (required)")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="minibatch size")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--hidden", type=int, help="supervised: hidden width (default 128)")
    p.add_argument("--channels", type=int, help="ae: conv channels (default 8)")
    p.add_argument("--disc-hidden", type=int, dest="disc_hidden", help="ae: discriminator width (default 64)")
    p.add_argument("--lambda1", type=float, help="ae: template loss weight (default 1)")
    p.add_argument("--lambda2", type=float, help="ae: reconstruction weight (default 1)")
    p.add_argument("--beta", type=float, help="ae: x-side weight (default 0.01)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate decision thresholds on validation originals")
    p.add_argument("--model", required=True, help="autoencoder model JSON")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", help="thresholds JSON path (default <out_dir>/thresholds.json)")
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("eval", parents=[common], help="run a preset experiment over repeated splits")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--preset", choices=sorted(PRESETS), help="experiment preset")
    p.add_argument("--runs", type=int, help="repetitions (default 5)")
    p.add_argument("--out", help="report directory (default <out_dir>/report-<preset>)")
    p.add_argument("--epochs", type=int, help="deep presets: override ae epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="deep presets: override batch size")
    p.add_argument("--lr", type=float, help="deep presets: override learning rate")
    p.add_argument("--channels", type=int, help="deep presets: override conv channels")
    p.add_argument("--disc-hidden", type=int, dest="disc_hidden", help="deep presets: override discriminator width")
    p.add_argument("--lambda1", type=float, help="deep presets: override template loss weight")
    p.add_argument("--lambda2", type=float, help="deep presets: override reconstruction weight")
    p.add_argument("--beta", type=float, help="deep presets: override x-side weight")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="render a report JSON as Markdown")
    p.add_argument("--in", dest="input", required=True, help="report.json path")
    p.add_argument("--out", help="markdown path (default alongside the JSON)")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("embed", parents=[common], help="export a PCA embedding of spatial metrics")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--reference", choices=("digital", "physical"), default="digital")
    p.add_argument("--use-planes", action="store_true", dest="use_planes")
    p.add_argument("--dims", type=int, default=2)
    p.add_argument("--out", help="CSV path (default <dataset>/embedding.csv)")
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser("bench", parents=[common], help="time the hot paths (writes nothing)")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("selftest", parents=[common], help="run the built-in oracle suites")
    p.set_defaults(handler=cmd_selftest)

    return parser


def _setup_logging(log_path) -> None:
    LOG.setLevel(logging.INFO)
    LOG.handlers.clear()
    if log_path:
        handler = logging.FileHandler(log_path)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        LOG.addHandler(handler)
    else:
        LOG.addHandler(logging.NullHandler())


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log)
    t0 = time.time()
    LOG.info("command %s starting", args.command)
    try:
        config = _load_config(args.config)
        code = args.handler(args, config)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        LOG.error("validation error: %s", exc)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        LOG.error("runtime failure", exc_info=True)
        return 2
    LOG.info("command %s finished in %.2fs", args.command, time.time() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
