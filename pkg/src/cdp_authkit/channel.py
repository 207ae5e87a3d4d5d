"""Print -> physical -> acquire channel simulation and copy attacks.

The channel models the information loss a pattern suffers on its way to a
sensor: ink spread (dot gain), optical blur, substrate/ink albedos,
illumination, sensor noise, gamma, optional small rotation. A copy attack
binarizes an acquired code (what a copy machine can still see), optionally
cleans isolated pixels, and reprints the estimate through a second channel.

Ink spread is a linear kernel with center weight 1 and every neighbor within
`spread_radius` weighted dot_gain / ((2r+1)^2 - 1), clamped to [0, 1]. The
default radius 1 gives the canonical 3x3 kernel with neighbor weight
dot_gain / 8. Because black can only grow and enclosed white can only shrink,
the model reproduces the asymmetric dot-gain behaviour real presses show:
black elements stay detectable while fine white openings disappear.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import AttackError, DataError, DegenerateImageError, ParameterError, StateError
from .imageio import (
    from_uint8,
    read_json,
    read_pgm,
    read_ppm,
    to_uint8,
    write_json,
    write_pgm,
    write_ppm,
)
from .metrics import binarize, otsu_threshold
from .rng import rng_for
from .template import Template

LABELS = (
    "original",
    "physical_reference",
    "fake1_white",
    "fake1_gray",
    "fake2_white",
    "fake2_gray",
)

FAKE_LABELS = ("fake1_white", "fake1_gray", "fake2_white", "fake2_gray")

# Rec.601 luma weights for collapsing color planes.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ChannelParams:
    """Print/acquisition model parameters.

    plane_jitter > 0 simulates a color sensor: three planes share geometry,
    blur and gamma but get independently jittered albedos and noise, and the
    observed grayscale image is their Rec.601 luminance collapse.
    """

    dot_gain: float = 0.25
    blur_sigma: float = 0.6
    substrate_albedo: float = 0.95
    ink_albedo: float = 0.10
    noise_sigma: float = 0.02
    gamma: float = 1.0
    illum_scale: float = 1.0
    rotation_deg: float = 0.0
    seed: int = 0
    spread_radius: int = 1
    plane_jitter: float = 0.0

    def __post_init__(self):
        if self.dot_gain < 0:
            raise ParameterError("dot_gain must be nonnegative")
        if self.blur_sigma < 0 or self.noise_sigma < 0 or self.plane_jitter < 0:
            raise ParameterError("sigmas must be nonnegative")
        if not 0.0 < self.substrate_albedo <= 1.0:
            raise ParameterError("substrate_albedo must lie in (0, 1]")
        if not 0.0 <= self.ink_albedo < self.substrate_albedo:
            raise ParameterError("ink_albedo must lie in [0, substrate_albedo)")
        if self.gamma <= 0 or self.illum_scale <= 0:
            raise ParameterError("gamma and illum_scale must be positive")
        if int(self.spread_radius) < 1:
            raise ParameterError("spread_radius must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class InkMap:
    """Per-pixel ink coverage after printing, still carrying frame geometry."""

    values: np.ndarray  # [0, 1], full grid including any marker frame
    frame_px: int
    cdp_side_px: int
    symbol_px: int
    template_id: str

    def __post_init__(self):
        self.values.setflags(write=False)


@dataclass(frozen=True)
class ObservedCode:
    """An acquired code: the pattern area as seen by the sensor.

    `image` is the grayscale view (luminance when color planes exist) and is
    always present; `planes` carries the (H, W, 3) color stack when the
    channel was run with plane_jitter > 0.
    """

    image: np.ndarray
    label: str
    template_id: str
    symbol_px: int
    acquisition_seed: int
    params: dict
    planes: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ParameterError(f"unknown label {self.label!r}")
        if not self.template_id:
            raise ParameterError("template_id must be set")
        self.image.setflags(write=False)
        if self.planes is not None:
            self.planes.setflags(write=False)


def spread_ink(binary: np.ndarray, dot_gain: float, radius: int = 1) -> np.ndarray:
    """Apply the dot-gain kernel to a black-ink indicator and clamp to [0, 1]."""
    values = np.asarray(binary, dtype=np.float64)
    if dot_gain == 0.0:
        return values.copy()
    size = 2 * int(radius) + 1
    kernel = np.full((size, size), dot_gain / (size * size - 1), dtype=np.float64)
    kernel[radius, radius] = 1.0
    # Zero padding: no ink bleeds in from outside the printed area.
    out = ndimage.convolve(values, kernel, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def print_template(
    t: Template, p: ChannelParams, template_id: Optional[str] = None
) -> InkMap:
    """Print a template: ink spreads by dot gain, clamped to full coverage.

    Args:
        t: template to print (marker frame allowed; its width must be known).
        p: channel parameters; only dot_gain and spread_radius matter here.
        template_id: identifier attached downstream; defaults to the
            template seed rendered in hex.
    """
    if t.marker_width_px is None:
        raise StateError("template has unknown marker width; cannot print")
    ink = spread_ink(t.pixels, p.dot_gain, p.spread_radius)
    return InkMap(
        values=ink,
        frame_px=t.marker_width_px,
        cdp_side_px=t.cdp_side_px,
        symbol_px=t.symbol_px,
        template_id=template_id if template_id is not None else f"t{t.seed:016x}",
    )


def acquire(ink: InkMap, p: ChannelParams, label: str = "original") -> ObservedCode:
    """Acquire an ink map: reflectance, blur, illumination, noise, gamma.

    The reflectance substrate_albedo*(1-ink) + ink_albedo*ink is blurred by a
    Gaussian PSF, scaled by illum_scale, corrupted with additive Gaussian
    noise from the params seed, clamped, gamma-mapped, optionally rotated
    (bilinear), then cropped to the pattern area via the known frame width.

    Acquiring the same ink map twice with different seeds yields an
    independent second shot; the "physical_reference" label marks that use.
    """
    planes = _acquire_planes(ink.values, p)
    frame, side = ink.frame_px, ink.cdp_side_px
    planes = planes[:, frame : frame + side, frame : frame + side]
    planes = np.clip(planes, 0.0, 1.0)
    if planes.shape[0] == 1:
        image, stack = planes[0], None
    else:
        stack = np.ascontiguousarray(np.moveaxis(planes, 0, 2))
        image = stack @ _LUMA
    return ObservedCode(
        image=image,
        label=label,
        template_id=ink.template_id,
        symbol_px=ink.symbol_px,
        acquisition_seed=int(p.seed),
        params=p.to_dict(),
        planes=stack,
    )


def _acquire_planes(ink_values: np.ndarray, p: ChannelParams) -> np.ndarray:
    """Run the optical/sensor pipeline; returns (n_planes, H, W) pre-crop."""
    n_planes = 3 if p.plane_jitter > 0 else 1
    out = np.empty((n_planes,) + ink_values.shape, dtype=np.float64)
    for idx in range(n_planes):
        substrate, ink_albedo = p.substrate_albedo, p.ink_albedo
        if n_planes == 3:
            jit = rng_for(p.seed, "plane-albedo", idx)
            substrate = float(np.clip(substrate + jit.normal(0.0, p.plane_jitter), 0.02, 1.0))
            ink_albedo = float(
                np.clip(ink_albedo + jit.normal(0.0, p.plane_jitter), 0.0, substrate - 0.01)
            )
        v = substrate * (1.0 - ink_values) + ink_albedo * ink_values
        if p.blur_sigma > 0:
            v = ndimage.gaussian_filter(v, sigma=p.blur_sigma, mode="nearest")
        v = v * p.illum_scale
        if p.noise_sigma > 0:
            noise_rng = rng_for(p.seed, "sensor-noise", idx)
            v = v + noise_rng.normal(0.0, p.noise_sigma, size=v.shape)
        # Clamp before the gamma map so fractional exponents stay real.
        v = np.clip(v, 0.0, 1.0)
        if p.gamma != 1.0:
            v = v**p.gamma
        if p.rotation_deg != 0.0:
            v = ndimage.rotate(
                v, p.rotation_deg, reshape=False, order=1, mode="nearest"
            )
        out[idx] = v
    return out


@dataclass(frozen=True)
class AttackParams:
    """Copy-attack configuration: estimation step plus reprint channel.

    The attack family is implied by the cleanup flag, matching the shipped
    fake conventions: machines that post-process their scan (morph_cleanup
    True) are the fake1 family, machines that do not are fake2. Substrate
    (white/gray) is read off the reprint albedo.
    """

    binarize_mode: str = "otsu"  # "otsu" | "fixed"
    fixed_threshold: Optional[float] = None
    morph_cleanup: bool = True
    reprint: ChannelParams = ChannelParams()

    def __post_init__(self):
        if self.binarize_mode not in ("otsu", "fixed"):
            raise ParameterError("binarize_mode must be 'otsu' or 'fixed'")
        if self.binarize_mode == "fixed":
            thr = self.fixed_threshold
            if thr is None or not 0.0 < float(thr) < 1.0:
                raise ParameterError("fixed threshold must lie in (0, 1)")

    def label(self) -> str:
        family = "fake1" if self.morph_cleanup else "fake2"
        substrate = "white" if self.reprint.substrate_albedo >= 0.85 else "gray"
        return f"{family}_{substrate}"


def estimate_template_binary(observed: ObservedCode, a: AttackParams) -> np.ndarray:
    """The attacker's template estimate: binarize, optionally clean up."""
    if a.binarize_mode == "otsu":
        try:
            thr = otsu_threshold(observed.image)
        except DegenerateImageError as exc:
            raise AttackError(f"cannot binarize probe: {exc}") from exc
    else:
        thr = float(a.fixed_threshold)
    est = binarize(observed.image, thr)
    if a.morph_cleanup:
        est = majority_filter(est)
    return est


def majority_filter(binary: np.ndarray) -> np.ndarray:
    """3x3 majority vote with replicated borders; kills isolated pixels."""
    counts = ndimage.correlate(
        np.asarray(binary, dtype=np.float64), np.ones((3, 3)), mode="nearest"
    )
    return (counts >= 5.0).astype(np.uint8)


def copy_attack(observed: ObservedCode, a: AttackParams) -> ObservedCode:
    """Estimate the template from an acquired code and reprint it.

    Returns an ObservedCode labeled by attack family and substrate; the fake
    inherits template_id and symbol size from the attacked code.
    """
    est = estimate_template_binary(observed, a)
    ink = InkMap(
        values=spread_ink(est, a.reprint.dot_gain, a.reprint.spread_radius),
        frame_px=0,
        cdp_side_px=est.shape[0],
        symbol_px=observed.symbol_px,
        template_id=observed.template_id,
    )
    return acquire(ink, a.reprint, label=a.label())


# Shipped defaults. The original press is a mild channel; fake1 is a close
# copy (cleanup on, mild reprint dot gain), fake2 a coarse dark copy
# (cleanup off, strong reprint dot gain over a wider spread).
DEFAULT_PRINT = ChannelParams()


def default_original_params(seed: int, plane_jitter: float = 0.03) -> ChannelParams:
    return replace(DEFAULT_PRINT, seed=seed, plane_jitter=plane_jitter)


def default_attack_params(
    family: str, substrate: str, seed: int, plane_jitter: float = 0.03
) -> AttackParams:
    """Shipped attack configurations: family in {fake1, fake2}, substrate in {white, gray}."""
    if family not in ("fake1", "fake2"):
        raise ParameterError("family must be 'fake1' or 'fake2'")
    if substrate not in ("white", "gray"):
        raise ParameterError("substrate must be 'white' or 'gray'")
    albedo = 0.95 if substrate == "white" else 0.75
    if family == "fake1":
        reprint = ChannelParams(
            dot_gain=0.3,
            blur_sigma=0.7,
            substrate_albedo=albedo,
            ink_albedo=0.10,
            noise_sigma=0.02,
            seed=seed,
            spread_radius=1,
            plane_jitter=plane_jitter,
        )
        return AttackParams(binarize_mode="otsu", morph_cleanup=True, reprint=reprint)
    reprint = ChannelParams(
        dot_gain=0.9,
        blur_sigma=1.0,
        substrate_albedo=albedo,
        ink_albedo=0.08,
        noise_sigma=0.025,
        seed=seed,
        spread_radius=2,
        plane_jitter=plane_jitter,
    )
    return AttackParams(binarize_mode="otsu", morph_cleanup=False, reprint=reprint)


def strong_dot_gain_params() -> ChannelParams:
    """The shipped strong-dot-gain setting used by the asymmetry property."""
    return ChannelParams(
        dot_gain=0.9,
        blur_sigma=1.0,
        substrate_albedo=0.95,
        ink_albedo=0.08,
        noise_sigma=0.0,
        seed=0,
        spread_radius=2,
    )


def save_observed(code: ObservedCode, path: str | Path) -> None:
    """Write <path>.pgm (grayscale) or <path>.ppm (color) plus JSON sidecar."""
    base = Path(path)
    base = base.with_suffix("") if base.suffix in (".pgm", ".ppm", ".json") else base
    if code.planes is not None:
        write_ppm(base.with_suffix(".ppm"), to_uint8(code.planes))
        raster = "ppm"
    else:
        write_pgm(base.with_suffix(".pgm"), to_uint8(code.image))
        raster = "pgm"
    write_json(
        base.with_suffix(".json"),
        {
            "label": code.label,
            "template_id": code.template_id,
            "symbol_px": code.symbol_px,
            "acquisition_seed": code.acquisition_seed,
            "params": code.params,
            "raster": raster,
        },
    )


def load_observed(path: str | Path) -> ObservedCode:
    """Load a code written by save_observed.

    Color codes recompute luminance from the quantized planes, so a loaded
    code re-saves byte-identically.
    """
    base = Path(path)
    base = base.with_suffix("") if base.suffix in (".pgm", ".ppm", ".json") else base
    meta = read_json(base.with_suffix(".json"))
    if meta.get("raster") == "ppm":
        planes = from_uint8(read_ppm(base.with_suffix(".ppm")))
        image = planes @ _LUMA
    else:
        planes = None
        image = from_uint8(read_pgm(base.with_suffix(".pgm")))
    return ObservedCode(
        image=image,
        label=str(meta["label"]),
        template_id=str(meta["template_id"]),
        symbol_px=int(meta["symbol_px"]),
        acquisition_seed=int(meta["acquisition_seed"]),
        params=dict(meta["params"]),
        planes=planes,
    )
