import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from skimage.metrics import structural_similarity

from oracles import psnr_loop, sad_loop, ssim_sliding
from splatloc.errors import ContractError
from splatloc.metrics import PSNR_CAP, heuristic, psnr, ssim, sum_abs_diff


def pair(seed, shape=(24, 20, 3)):
    rng = np.random.default_rng(seed)
    a = rng.random(shape)
    b = np.clip(a + rng.normal(0, 0.1, shape), 0, 1)
    return a, b


def test_sad_examples():
    a = np.zeros((2, 2, 3))
    b = np.full((2, 2, 3), 0.5)
    assert sum_abs_diff(a, b) == 6.0
    assert sum_abs_diff(a, a) == 0.0


def test_psnr_examples():
    a = np.zeros((4, 4, 3))
    assert psnr(a, np.full_like(a, 0.1)) == pytest.approx(20.0, abs=1e-12)
    assert psnr(a, np.full_like(a, 1.0)) == pytest.approx(0.0, abs=1e-12)
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, np.full_like(a, 1e-6)) == PSNR_CAP


def test_ssim_examples():
    a, b = pair(0)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) < 1.0
    assert ssim(a, 1 - a) < 0


@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_loop_oracles(seed):
    a, b = pair(seed)
    assert sum_abs_diff(a, b) == pytest.approx(sad_loop(a, b), abs=1e-9)
    assert psnr(a, b) == pytest.approx(psnr_loop(a, b), abs=1e-9)
    assert ssim(a, b) == pytest.approx(ssim_sliding(a, b), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_skimage(seed):
    a, b = pair(seed, (40, 33, 3))
    ref = structural_similarity(
        a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
        data_range=1.0, channel_axis=-1,
    )
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_symmetry():
    a, b = pair(7)
    assert sum_abs_diff(a, b) == sum_abs_diff(b, a)
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)


images = arrays(np.float64, (3, 4, 3), elements=st.floats(0, 1))


@settings(max_examples=60)
@given(images, images, images)
def test_sad_triangle_inequality(a, b, c):
    assert sum_abs_diff(a, c) <= sum_abs_diff(a, b) + sum_abs_diff(b, c) + 1e-9


def test_monotone_in_perturbation():
    rng = np.random.default_rng(3)
    a = rng.random((32, 32, 3)) * 0.5 + 0.25
    noise = rng.normal(0, 1, a.shape)
    prev = {"sad": -1.0, "psnr": -1.0, "ssim": -1.0}
    for eps in (0.0, 0.01, 0.02, 0.05, 0.1):
        b = a + eps * noise * 0.1
        for kind in prev:
            h = heuristic(kind, a, b)
            assert h >= prev[kind]
            if kind == "sad":
                assert h > prev[kind]
            prev[kind] = h


def test_sad_strictly_increases_with_uniform_shift():
    a = np.full((8, 8, 3), 0.3)
    vals = [sum_abs_diff(a, a + d) for d in (0.0, 0.05, 0.1, 0.2, 0.4)]
    assert all(y > x for x, y in zip(vals, vals[1:]))


def test_heuristic_examples():
    black, white = np.zeros((2, 2, 3)), np.ones((2, 2, 3))
    assert heuristic("sad", black, white) == 12.0
    a = np.full((4, 4, 3), 0.2)
    assert heuristic("psnr", a, a + 0.1) == pytest.approx(80.0, abs=1e-9)
    half = np.full((16, 16, 3), 0.5)
    assert ssim(half, 1 - half) == pytest.approx(1.0, abs=1e-12)


def test_heuristics_zero_for_identical():
    a, _ = pair(1)
    for kind in ("sad", "psnr", "ssim"):
        assert heuristic(kind, a, a) == pytest.approx(0.0, abs=1e-12)


def test_heuristic_psnr_and_ssim_forms():
    a, b = pair(2)
    assert heuristic("psnr", a, b) == pytest.approx(PSNR_CAP - psnr(a, b))
    assert heuristic("ssim", a, b) == pytest.approx(1 - ssim(a, b))
    assert heuristic("ssim", a, 1 - a) > 1.0
    assert math.isfinite(heuristic("psnr", a, b))


def test_contract_errors():
    a = np.zeros((16, 16, 3))
    with pytest.raises(ContractError):
        sum_abs_diff(a, np.zeros((16, 15, 3)))
    with pytest.raises(ContractError):
        psnr(a, np.zeros((16, 16)))
    with pytest.raises(ContractError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))
    with pytest.raises(ContractError):
        heuristic("l2", a, a)
    with pytest.raises(ValueError):
        heuristic("ssim", a, a[:, :8])
