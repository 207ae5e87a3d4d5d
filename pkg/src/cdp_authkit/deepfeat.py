"""Template-estimating autoencoder features: x -> t_hat -> x_hat.

The encoder maps an acquired pixel image to a symbol-resolution estimate
t_hat in (0,1) via a sigmoid head; the decoder maps t_hat back to a pixel
reconstruction. Four training scenarios share the template term and add
adversarial and reconstruction terms:

    scenario 1: lambda1 * RMS(t - t_hat)
    scenario 2: scenario 1 + adversarial template term (discriminator D_t)
    scenario 3: scenario 1 + beta * lambda2 * RMS(x - x_hat)
    scenario 4: scenario 3 + both adversarial terms (D_t, and D_x scaled by beta)

Discriminators are trained by logistic loss to separate real from estimated
samples (density-ratio estimation); the generator receives the
non-saturating -log D(fake) gradient. Updates alternate one discriminator
step per generator step, the discriminator seeing the pre-update generator
outputs. All RMS norms are per-sample root-mean-square, so loss scales are
resolution independent.

Every beta-weighted computation is skipped outright when beta == 0, so
scenario 3 reproduces scenario 1 (and 4 reproduces 2) bit-for-bit on the
same seed: weight groups draw from independent named RNG streams and the
batch order stream does not depend on the scenario.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .channel import ObservedCode
from .errors import DataError, ParameterError, TrainingError
from .imageio import read_json, write_json
from .nn import (
    Adam,
    Conv2d,
    Dense,
    Relu,
    Sigmoid,
    UpsampleNearest,
    chain_backward,
    chain_forward,
    sigmoid,
    softplus,
    weighted_layers,
    zero_grads,
)
from .rng import rng_for
from .template import Template

SCENARIOS = (1, 2, 3, 4)


@dataclass
class AeConfig:
    """Training hyperparameters. Scenario is passed to train_ae separately."""

    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    lambda1: float = 1.0
    lambda2: float = 1.0
    beta: float = 0.01
    channels: int = 8
    disc_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be positive")
        if self.lr <= 0 or self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ParameterError("lr, lambda1 and lambda2 must be positive")
        if self.beta < 0:
            raise ParameterError("beta must be nonnegative")
        if self.channels < 1 or self.disc_hidden < 1:
            raise ParameterError("channels and disc_hidden must be positive")


@dataclass
class AeModel:
    """Weights for one scenario plus the recorded training trace."""

    scenario: int
    n_sym: int
    symbol_px: int
    config: AeConfig
    encoder: list
    decoder: Optional[list]
    disc_t: Optional[list]
    disc_x: Optional[list]
    loss_trace: dict = field(default_factory=dict)

    @property
    def image_side(self) -> int:
        return self.n_sym * self.symbol_px

    def groups(self) -> dict:
        """Active weight groups, name -> layer list."""
        out = {"encoder": self.encoder}
        if self.decoder is not None:
            out["decoder"] = self.decoder
        if self.disc_t is not None:
            out["disc_t"] = self.disc_t
        if self.disc_x is not None:
            out["disc_x"] = self.disc_x
        return out


def build_ae_model(
    scenario: int, n_sym: int, symbol_px: int, config: AeConfig
) -> AeModel:
    """Initialize the weight groups a scenario needs, each from its own stream."""
    if scenario not in SCENARIOS:
        raise ParameterError(f"scenario must be one of {SCENARIOS}")
    c = config.channels
    spx = symbol_px
    enc_rng = rng_for(config.seed, "init", "encoder")
    encoder = [
        Conv2d(enc_rng, 1, c, k=spx + 2, stride=spx, pad=1),
        Relu(),
        Conv2d(enc_rng, c, c, k=3, stride=1, pad=1),
        Relu(),
        Conv2d(enc_rng, c, 1, k=3, stride=1, pad=1),
        Sigmoid(),
    ]
    decoder = disc_t = disc_x = None
    if scenario >= 3:
        dec_rng = rng_for(config.seed, "init", "decoder")
        decoder = [
            Conv2d(dec_rng, 1, c, k=3, stride=1, pad=1),
            Relu(),
            UpsampleNearest(spx),
            Conv2d(dec_rng, c, c, k=3, stride=1, pad=1),
            Relu(),
            Conv2d(dec_rng, c, 1, k=3, stride=1, pad=1),
        ]
    if scenario in (2, 4):
        dt_rng = rng_for(config.seed, "init", "disc_t")
        disc_t = [
            Dense(dt_rng, n_sym * n_sym, config.disc_hidden),
            Relu(),
            Dense(dt_rng, config.disc_hidden, 1),
        ]
    if scenario == 4:
        dx_rng = rng_for(config.seed, "init", "disc_x")
        side = n_sym * spx
        disc_x = [
            Dense(dx_rng, side * side, config.disc_hidden),
            Relu(),
            Dense(dx_rng, config.disc_hidden, 1),
        ]
    return AeModel(
        scenario=scenario,
        n_sym=n_sym,
        symbol_px=spx,
        config=config,
        encoder=encoder,
        decoder=decoder,
        disc_t=disc_t,
        disc_x=disc_x,
    )


def _rms_per_sample(diff: np.ndarray) -> np.ndarray:
    return np.sqrt((diff * diff).mean(axis=(1, 2, 3)))


def _rms_loss(pred: np.ndarray, target: np.ndarray, weight: float):
    """weight * mean_b RMS(pred_b - target_b) and its gradient w.r.t. pred."""
    diff = pred - target
    r = _rms_per_sample(diff)
    loss = weight * float(r.mean())
    safe = np.where(r > 0.0, r, 1.0)
    dpred = (weight / pred.shape[0]) * diff / (pred[0].size * safe[:, None, None, None])
    dpred[r == 0.0] = 0.0
    return loss, dpred


def _flatten(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def _gen_adversarial(disc, fake: np.ndarray, weight: float):
    """Non-saturating generator term weight * mean(-log D(fake)).

    Returns (loss, gradient w.r.t. fake). Discriminator weights accumulate
    junk gradients here; the discriminator's own step zeroes them first.
    """
    z = chain_forward(disc, _flatten(fake))
    loss = weight * float(softplus(-z).mean())
    dz = weight * (sigmoid(z) - 1.0) / z.shape[0]
    dflat = chain_backward(disc, dz)
    return loss, dflat.reshape(fake.shape)


def _disc_step(disc, optimizer: Adam, real: np.ndarray, fake: np.ndarray) -> float:
    """One logistic-loss discriminator update on detached real/fake batches."""
    zero_grads(disc)
    z_real = chain_forward(disc, _flatten(real))
    d_real = (sigmoid(z_real) - 1.0) / z_real.shape[0]
    chain_backward(disc, d_real)
    z_fake = chain_forward(disc, _flatten(fake))
    d_fake = sigmoid(z_fake) / z_fake.shape[0]
    chain_backward(disc, d_fake)
    loss = float(softplus(-z_real).mean() + softplus(z_fake).mean())
    optimizer.step()
    return loss


def train_ae(
    images: np.ndarray,
    symbols: np.ndarray,
    scenario: int,
    config: Optional[AeConfig] = None,
) -> AeModel:
    """Train an autoencoder on original codes paired with their templates.

    Args:
        images: (N, H, W) acquired originals in [0, 1].
        symbols: (N, n_sym, n_sym) binary template symbol grids, aligned.
        scenario: 1..4, selecting the loss combination.
        config: hyperparameters; defaults are the shipped desk scale.

    Returns:
        AeModel with per-epoch loss_trace.

    Raises:
        ParameterError: bad scenario or inconsistent shapes.
        TrainingError: non-finite loss (trace attached).
    """
    cfg = config if config is not None else AeConfig()
    x = np.asarray(images, dtype=np.float64)
    t = np.asarray(symbols, dtype=np.float64)
    if x.ndim != 3 or t.ndim != 3 or x.shape[0] != t.shape[0] or x.shape[0] == 0:
        raise ParameterError("need aligned nonempty (N,H,W) images and (N,n,n) symbols")
    n_sym = t.shape[1]
    if t.shape[2] != n_sym or x.shape[1] != x.shape[2]:
        raise ParameterError("images and symbol grids must be square")
    if x.shape[1] % n_sym:
        raise ParameterError("image side must be a multiple of the symbol grid side")
    spx = x.shape[1] // n_sym

    model = build_ae_model(scenario, n_sym, spx, cfg)
    n = x.shape[0]
    xb4 = x[:, None, :, :]
    tb4 = t[:, None, :, :]
    use_x_side = scenario >= 3 and cfg.beta != 0.0

    opt_enc = Adam(model.encoder, cfg.lr)
    opt_dec = Adam(model.decoder, cfg.lr) if use_x_side else None
    opt_dt = Adam(model.disc_t, cfg.lr) if model.disc_t is not None else None
    opt_dx = Adam(model.disc_x, cfg.lr) if (model.disc_x is not None and use_x_side) else None

    shuffle = rng_for(cfg.seed, "batches")
    trace: dict[str, list] = {key: [] for key in (
        "total", "template_rms", "adv_t", "recon_rms", "adv_x", "disc_t", "disc_x")}

    for _ in range(cfg.epochs):
        order = shuffle.permutation(n)
        sums = dict.fromkeys(trace, 0.0)
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xi, ti = xb4[idx], tb4[idx]
            n_batches += 1

            zero_grads(model.encoder)
            t_hat = chain_forward(model.encoder, xi)
            loss_t, d_that = _rms_loss(t_hat, ti, cfg.lambda1)
            sums["template_rms"] += loss_t
            total = loss_t

            if model.disc_t is not None:
                loss_adv_t, d_adv = _gen_adversarial(model.disc_t, t_hat, 1.0)
                sums["adv_t"] += loss_adv_t
                total += loss_adv_t
                d_that = d_that + d_adv

            x_hat = None
            if use_x_side:
                zero_grads(model.decoder)
                x_hat = chain_forward(model.decoder, t_hat)
                loss_rec, d_xhat = _rms_loss(x_hat, xi, cfg.beta * cfg.lambda2)
                sums["recon_rms"] += loss_rec
                total += loss_rec
                if model.disc_x is not None:
                    loss_adv_x, d_adv_x = _gen_adversarial(
                        model.disc_x, x_hat, cfg.beta
                    )
                    sums["adv_x"] += loss_adv_x
                    total += loss_adv_x
                    d_xhat = d_xhat + d_adv_x
                d_that = d_that + chain_backward(model.decoder, d_xhat)

            chain_backward(model.encoder, d_that)
            opt_enc.step()
            if opt_dec is not None:
                opt_dec.step()

            # Discriminators train against the pre-update generator outputs.
            if opt_dt is not None:
                sums["disc_t"] += _disc_step(model.disc_t, opt_dt, ti, t_hat)
            if opt_dx is not None:
                sums["disc_x"] += _disc_step(model.disc_x, opt_dx, xi, x_hat)

            sums["total"] += total

        for key, value in sums.items():
            trace[key].append(value / n_batches)
        if not math.isfinite(trace["total"][-1]):
            model.loss_trace = trace
            raise TrainingError("autoencoder loss became non-finite", trace=trace)

    model.loss_trace = trace
    return model


@dataclass(frozen=True)
class DeepFeatures:
    """Per-probe deep features; optional fields follow the model scenario."""

    hamming_sym: int
    recon_l2: Optional[float] = None
    disc_t_score: Optional[float] = None
    disc_x_score: Optional[float] = None


def encode(model: AeModel, images: np.ndarray) -> np.ndarray:
    """t_hat in (0,1) for a batch of (N, H, W) images."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] != model.image_side or x.shape[2] != model.image_side:
        raise DataError(f"expected {model.image_side}x{model.image_side} images")
    return chain_forward(model.encoder, x[:, None, :, :])[:, 0]


def decode(model: AeModel, t_hat: np.ndarray) -> np.ndarray:
    """x_hat clamped to [0,1] for a batch of (N, n, n) template estimates."""
    if model.decoder is None:
        raise ParameterError(f"scenario {model.scenario} has no decoder")
    t = np.asarray(t_hat, dtype=np.float64)
    if t.ndim == 2:
        t = t[None]
    out = chain_forward(model.decoder, t[:, None, :, :])[:, 0]
    return np.clip(out, 0.0, 1.0)


def extract_features(
    model: AeModel,
    probe: Union[ObservedCode, np.ndarray],
    template: Template,
) -> DeepFeatures:
    """Deep features of one probe against its digital template.

    t_hat is thresholded at 0.5 only for the Hamming count; the decoder
    consumes the continuous t_hat, as during training. x_hat is clamped to
    [0,1] before the reconstruction error.
    """
    image = probe.image if isinstance(probe, ObservedCode) else np.asarray(probe)
    feats = extract_features_batch(model, image[None], template.symbols[None])
    return DeepFeatures(
        hamming_sym=int(feats["hamming_sym"][0]),
        recon_l2=None if feats["recon_l2"] is None else float(feats["recon_l2"][0]),
        disc_t_score=None if feats["disc_t_score"] is None else float(feats["disc_t_score"][0]),
        disc_x_score=None if feats["disc_x_score"] is None else float(feats["disc_x_score"][0]),
    )


def extract_features_batch(
    model: AeModel, images: np.ndarray, symbols: np.ndarray
) -> dict:
    """Vectorized extract_features over aligned (N,H,W) probes and (N,n,n) grids."""
    x = np.asarray(images, dtype=np.float64)
    syms = np.asarray(symbols)
    if x.shape[0] != syms.shape[0]:
        raise DataError("images and symbol grids must align")
    if syms.shape[1] != model.n_sym or syms.shape[2] != model.n_sym:
        raise DataError(f"expected {model.n_sym}x{model.n_sym} symbol grids")
    t_hat = encode(model, x)
    t_bin = (t_hat >= 0.5).astype(np.uint8)
    hamming = (t_bin != syms.astype(np.uint8)).sum(axis=(1, 2)).astype(np.int64)
    out = {
        "hamming_sym": hamming,
        "recon_l2": None,
        "disc_t_score": None,
        "disc_x_score": None,
    }
    x_hat = None
    if model.decoder is not None:
        x_hat = decode(model, t_hat)
        diff = x_hat - x
        out["recon_l2"] = np.sqrt((diff * diff).mean(axis=(1, 2)))
    if model.disc_t is not None:
        z = chain_forward(model.disc_t, _flatten(t_hat[:, None]))
        out["disc_t_score"] = sigmoid(z)[:, 0]
    if model.disc_x is not None and x_hat is not None:
        z = chain_forward(model.disc_x, _flatten(x_hat[:, None]))
        out["disc_x_score"] = sigmoid(z)[:, 0]
    return out


def _generator_loss(model: AeModel, xi: np.ndarray, ti: np.ndarray) -> float:
    """Scalar generator objective at the current weights (no side effects)."""
    cfg = model.config
    t_hat = chain_forward(model.encoder, xi)
    loss = _rms_loss(t_hat, ti, cfg.lambda1)[0]
    if model.disc_t is not None:
        z = chain_forward(model.disc_t, _flatten(t_hat))
        loss += float(softplus(-z).mean())
    if model.decoder is not None and cfg.beta != 0.0:
        x_hat = chain_forward(model.decoder, t_hat)
        loss += _rms_loss(x_hat, xi, cfg.beta * cfg.lambda2)[0]
        if model.disc_x is not None:
            z = chain_forward(model.disc_x, _flatten(x_hat))
            loss += cfg.beta * float(softplus(-z).mean())
    return loss


def _disc_loss(model: AeModel, which: str, xi: np.ndarray, ti: np.ndarray) -> float:
    """Scalar logistic loss of one discriminator at the current weights."""
    t_hat = chain_forward(model.encoder, xi)
    if which == "disc_t":
        disc, real, fake = model.disc_t, ti, t_hat
    else:
        disc = model.disc_x
        real = xi
        fake = chain_forward(model.decoder, t_hat)
    z_real = chain_forward(disc, _flatten(real))
    z_fake = chain_forward(disc, _flatten(fake))
    return float(softplus(-z_real).mean() + softplus(z_fake).mean())


def _generator_grads(model: AeModel, xi: np.ndarray, ti: np.ndarray) -> dict:
    """Analytic generator gradients per group (encoder, decoder if active)."""
    cfg = model.config
    gen_groups = {"encoder": model.encoder}
    zero_grads(model.encoder)
    t_hat = chain_forward(model.encoder, xi)
    _, d_that = _rms_loss(t_hat, ti, cfg.lambda1)
    if model.disc_t is not None:
        d_that = d_that + _gen_adversarial(model.disc_t, t_hat, 1.0)[1]
    if model.decoder is not None and cfg.beta != 0.0:
        gen_groups["decoder"] = model.decoder
        zero_grads(model.decoder)
        x_hat = chain_forward(model.decoder, t_hat)
        _, d_xhat = _rms_loss(x_hat, xi, cfg.beta * cfg.lambda2)
        if model.disc_x is not None:
            d_xhat = d_xhat + _gen_adversarial(model.disc_x, x_hat, cfg.beta)[1]
        d_that = d_that + chain_backward(model.decoder, d_xhat)
    chain_backward(model.encoder, d_that)
    return {
        name: [(layer.gw.copy(), layer.gb.copy()) for layer in weighted_layers(layers)]
        for name, layers in gen_groups.items()
    }


def _disc_grads(model: AeModel, which: str, xi: np.ndarray, ti: np.ndarray):
    disc = model.disc_t if which == "disc_t" else model.disc_x
    zero_grads(disc)
    t_hat = chain_forward(model.encoder, xi)
    if which == "disc_t":
        real, fake = ti, t_hat
    else:
        real = xi
        fake = chain_forward(model.decoder, t_hat)
    z_real = chain_forward(disc, _flatten(real))
    chain_backward(disc, (sigmoid(z_real) - 1.0) / z_real.shape[0])
    z_fake = chain_forward(disc, _flatten(fake))
    chain_backward(disc, sigmoid(z_fake) / z_fake.shape[0])
    return [(layer.gw.copy(), layer.gb.copy()) for layer in weighted_layers(disc)]


def _relu_layers(model: AeModel):
    for layers in model.groups().values():
        for layer in layers:
            if isinstance(layer, Relu):
                yield layer


def _set_mask_mode(model: AeModel, mode: str) -> None:
    for layer in _relu_layers(model):
        layer.mask_mode = mode
        layer.replay_idx = 0
        if mode != "replay":
            layer.mask_log = []


def _reset_replay(model: AeModel) -> None:
    for layer in _relu_layers(model):
        layer.replay_idx = 0


def gradient_check(
    model: AeModel, images: np.ndarray, symbols: np.ndarray, h: float = 1e-5
) -> float:
    """Central finite differences vs analytic gradients for every active group.

    Walks every coordinate of every weight array, so call it on small nets
    only. Returns the maximum per-group relative error
    ||g_analytic - g_fd|| / max(||g_analytic||, ||g_fd||).

    The analytic pass records the ReLU masks per forward call; the
    finite-difference probes replay them. The comparison is then between two
    views of the same smooth branch, so units that happen to sit at or near
    the kink (guaranteed at initialization, where biases are exactly zero)
    cannot flip and fake a mismatch.
    """
    x = np.asarray(images, dtype=np.float64)[:, None, :, :]
    t = np.asarray(symbols, dtype=np.float64)[:, None, :, :]

    checks = [("generator", None)]
    if model.disc_t is not None:
        checks.append(("disc", "disc_t"))
    if model.disc_x is not None and model.config.beta != 0.0:
        checks.append(("disc", "disc_x"))

    worst = 0.0
    for kind, which in checks:
        _set_mask_mode(model, "record")
        if kind == "generator":
            analytic = _generator_grads(model, x, t)
            raw_loss = lambda: _generator_loss(model, x, t)  # noqa: E731
            targets = {name: model.groups()[name] for name in analytic}
        else:
            analytic = {which: _disc_grads(model, which, x, t)}
            raw_loss = lambda w=which: _disc_loss(model, w, x, t)  # noqa: E731
            targets = {which: model.groups()[which]}
        _set_mask_mode(model, "replay")

        def loss_fn():
            _reset_replay(model)
            return raw_loss()

        for name, layers in targets.items():
            fd_parts, an_parts = [], []
            for layer, (gw, gb) in zip(weighted_layers(layers), analytic[name]):
                for param, grad in ((layer.w, gw), (layer.b, gb)):
                    fd = np.zeros_like(param)
                    flat = param.reshape(-1)
                    fd_flat = fd.reshape(-1)
                    for i in range(flat.size):
                        orig = flat[i]
                        flat[i] = orig + h
                        up = loss_fn()
                        flat[i] = orig - h
                        down = loss_fn()
                        flat[i] = orig
                        fd_flat[i] = (up - down) / (2.0 * h)
                    fd_parts.append(fd.ravel())
                    an_parts.append(grad.ravel())
            fd_vec = np.concatenate(fd_parts)
            an_vec = np.concatenate(an_parts)
            denom = max(np.linalg.norm(an_vec), np.linalg.norm(fd_vec), 1e-12)
            worst = max(worst, float(np.linalg.norm(an_vec - fd_vec) / denom))
    _set_mask_mode(model, "normal")
    return worst


def save_ae(model: AeModel, path: str | Path) -> None:
    groups = {}
    for name, layers in model.groups().items():
        groups[name] = [
            {"w": layer.w.tolist(), "b": layer.b.tolist()}
            for layer in weighted_layers(layers)
        ]
    cfg = model.config
    write_json(
        path,
        {
            "kind": "ae",
            "scenario": model.scenario,
            "n_sym": model.n_sym,
            "symbol_px": model.symbol_px,
            "config": {
                "epochs": cfg.epochs,
                "batch_size": cfg.batch_size,
                "lr": cfg.lr,
                "lambda1": cfg.lambda1,
                "lambda2": cfg.lambda2,
                "beta": cfg.beta,
                "channels": cfg.channels,
                "disc_hidden": cfg.disc_hidden,
                "seed": cfg.seed,
            },
            "groups": groups,
            "loss_trace": model.loss_trace,
        },
    )


def load_ae(path: str | Path) -> AeModel:
    obj = read_json(path)
    if obj.get("kind") != "ae":
        raise DataError("not an autoencoder model file")
    cfg = AeConfig(**obj["config"])
    model = build_ae_model(int(obj["scenario"]), int(obj["n_sym"]), int(obj["symbol_px"]), cfg)
    for name, layers in model.groups().items():
        stored = obj["groups"][name]
        weighted = weighted_layers(layers)
        if len(stored) != len(weighted):
            raise DataError(f"group {name} has unexpected layer count")
        for layer, entry in zip(weighted, stored):
            w = np.asarray(entry["w"], dtype=np.float64)
            b = np.asarray(entry["b"], dtype=np.float64)
            if w.shape != layer.w.shape or b.shape != layer.b.shape:
                raise DataError(f"group {name} has unexpected weight shapes")
            layer.w = w
            layer.b = b
    model.loss_trace = obj.get("loss_trace", {})
    return model
