"""Print/acquire channel physics, copy attacks, and observed-code persistence."""

import numpy as np
import pytest

from cdp_authkit.channel import (
    AttackParams,
    ChannelParams,
    acquire,
    copy_attack,
    default_attack_params,
    default_original_params,
    estimate_template_binary,
    load_observed,
    majority_filter,
    print_template,
    save_observed,
    spread_ink,
    strong_dot_gain_params,
)
from cdp_authkit.errors import ParameterError
from cdp_authkit.metrics import hamming_symbols
from cdp_authkit.rng import rng_for
from cdp_authkit.template import generate_template

_LUMA = np.array([0.299, 0.587, 0.114])


def _clean_params(**kw):
    return ChannelParams(noise_sigma=0.0, plane_jitter=0.0, **kw)


def test_channel_params_validation():
    with pytest.raises(ParameterError):
        ChannelParams(dot_gain=-0.1)
    with pytest.raises(ParameterError):
        ChannelParams(substrate_albedo=0.0)
    with pytest.raises(ParameterError):
        ChannelParams(ink_albedo=0.96)  # above substrate
    with pytest.raises(ParameterError):
        ChannelParams(gamma=0.0)
    with pytest.raises(ParameterError):
        ChannelParams(spread_radius=0)


def test_spread_ink_identity_monotone_and_padding():
    rng = rng_for(3, "spread")
    binary = (rng.random((20, 20)) < 0.5).astype(np.uint8)
    assert np.array_equal(spread_ink(binary, 0.0), binary.astype(np.float64))
    coverage = [spread_ink(binary, g).mean() for g in (0.0, 0.2, 0.5, 0.9)]
    assert all(a <= b for a, b in zip(coverage, coverage[1:]))
    spread = spread_ink(binary, 0.9, radius=2)
    assert spread.min() >= 0.0 and spread.max() <= 1.0
    # zero padding: a lone corner dot cannot receive ink from outside
    lone = np.zeros((6, 6), dtype=np.uint8)
    lone[0, 0] = 1
    s = spread_ink(lone, 0.8)
    assert s[0, 0] == 1.0
    assert s[5, 5] == 0.0


def test_acquire_polarity_shape_and_determinism():
    t = generate_template(12, 3, 0.5, seed=1)
    p = default_original_params(seed=9, plane_jitter=0.0)
    ink = print_template(t, p, template_id="t0")
    a = acquire(ink, p, "original")
    b = acquire(ink, p, "original")
    assert a.image.shape == (36, 36)
    assert np.array_equal(a.image, b.image)
    assert a.template_id == "t0" and a.symbol_px == 3
    # ink regions reflect less light than substrate regions
    ink_mask = t.pixels.astype(bool)
    assert a.image[ink_mask].mean() < a.image[~ink_mask].mean()


def test_second_acquisition_is_independent_shot():
    from dataclasses import replace

    t = generate_template(12, 3, 0.5, seed=1)
    p = default_original_params(seed=9, plane_jitter=0.0)
    ink = print_template(t, p)
    first = acquire(ink, p, "original")
    second = acquire(ink, replace(p, seed=10), "physical_reference")
    assert second.label == "physical_reference"
    assert not np.array_equal(first.image, second.image)
    # same print though: the two shots are strongly correlated
    from cdp_authkit.metrics import pearson

    assert pearson(first.image, second.image) > 0.9


def test_color_planes_and_luminance_collapse():
    t = generate_template(10, 3, 0.5, seed=2)
    p = default_original_params(seed=4, plane_jitter=0.05)
    code = acquire(print_template(t, p), p, "original")
    assert code.planes is not None and code.planes.shape == (30, 30, 3)
    assert np.allclose(code.image, code.planes @ _LUMA, atol=1e-12)
    # jittered plane albedos: planes must not be identical
    assert not np.array_equal(code.planes[..., 0], code.planes[..., 1])


def test_rotation_changes_image_but_not_shape():
    t = generate_template(10, 3, 0.5, seed=2)
    p = _clean_params(seed=1)
    straight = acquire(print_template(t, p), p)
    rot = _clean_params(seed=1, rotation_deg=2.0)
    tilted = acquire(print_template(t, rot), rot)
    assert tilted.image.shape == straight.image.shape
    assert not np.array_equal(tilted.image, straight.image)


def test_estimate_template_binary_modes():
    t = generate_template(16, 3, 0.5, seed=5)
    # clamp-free mild channel, no noise: Otsu recovery is near-perfect
    p = _clean_params(dot_gain=0.1, blur_sigma=0.3, seed=0)
    code = acquire(print_template(t, p), p)
    est = estimate_template_binary(code, AttackParams(morph_cleanup=False))
    assert est.shape == t.pixels.shape
    assert hamming_symbols(est, t) <= 2
    # an extreme fixed threshold captures everything as ink
    est_all = estimate_template_binary(
        code, AttackParams(binarize_mode="fixed", fixed_threshold=0.999, morph_cleanup=False)
    )
    assert est_all.all()
    with pytest.raises(ParameterError):
        AttackParams(binarize_mode="fixed", fixed_threshold=0.0)
    with pytest.raises(ParameterError):
        AttackParams(binarize_mode="nope")


def test_majority_filter_cleans_isolated_pixels():
    grid = np.zeros((9, 9), dtype=np.uint8)
    grid[4, 4] = 1  # lone ink speck
    assert not majority_filter(grid)[4, 4]
    grid = np.ones((9, 9), dtype=np.uint8)
    grid[4, 4] = 0  # lone hole
    assert majority_filter(grid)[4, 4]


def test_default_attack_params_labels():
    for family in ("fake1", "fake2"):
        for substrate in ("white", "gray"):
            a = default_attack_params(family, substrate, seed=0)
            assert a.label() == f"{family}_{substrate}"
    assert default_attack_params("fake1", "white", 0).morph_cleanup
    assert not default_attack_params("fake2", "white", 0).morph_cleanup
    with pytest.raises(ParameterError):
        default_attack_params("fake3", "white", 0)
    with pytest.raises(ParameterError):
        default_attack_params("fake1", "blue", 0)


def test_copy_attack_degrades_and_labels():
    t = generate_template(16, 3, 0.5, seed=6)
    p = default_original_params(seed=3, plane_jitter=0.0)
    original = acquire(print_template(t, p, "t6"), p, "original")
    fake = copy_attack(original, default_attack_params("fake2", "gray", 11, plane_jitter=0.0))
    assert fake.label == "fake2_gray"
    assert fake.template_id == "t6"
    assert fake.image.shape == original.image.shape
    # information loss: the fake's own template estimate is worse
    probe = AttackParams(morph_cleanup=False)
    h_orig = hamming_symbols(estimate_template_binary(original, probe), t)
    h_fake = hamming_symbols(estimate_template_binary(fake, probe), t)
    assert h_fake > h_orig


def test_dot_gain_asymmetry_black_grows_white_shrinks():
    t = generate_template(15, 3, 0.5, seed=7)
    p = strong_dot_gain_params()
    code = acquire(print_template(t, p), p)
    est = estimate_template_binary(code, AttackParams(morph_cleanup=False))
    assert est.sum() > t.pixels.sum()  # net ink growth under strong dot gain


def test_save_load_roundtrip_gray_and_color(tmp_path):
    t = generate_template(8, 3, 0.5, seed=8)
    for jitter, ext in ((0.0, ".pgm"), (0.04, ".ppm")):
        p = default_original_params(seed=2, plane_jitter=jitter)
        code = acquire(print_template(t, p, "t8"), p, "original")
        base = tmp_path / f"code{ext}"
        save_observed(code, base)
        assert (tmp_path / f"code{ext}").exists()
        back = load_observed(base)
        assert back.label == code.label
        assert back.template_id == code.template_id
        assert back.symbol_px == code.symbol_px
        # quantized roundtrip: re-saving is byte identical
        save_observed(back, tmp_path / f"again{ext}")
        assert (tmp_path / f"again{ext}").read_bytes() == base.read_bytes()
