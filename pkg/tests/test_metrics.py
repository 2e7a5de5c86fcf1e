"""Skill-metric tests: worked examples, invariants, and the brute-force
pixel-loop oracle for the 2D scores."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from floodlab.metrics import (CODE_EXCLUDED, CODE_FN, CODE_FP, CODE_TN, CODE_TP,
                              ContingencyCounts, SeriesPair, contingency, csi,
                              f_beta, format_score, kappa, maae, nse,
                              rasterize_flood_mask, rmse)


def pair(model, obs):
    model = np.asarray(model, dtype=float)
    return SeriesPair(np.arange(model.size, dtype=float), model, np.asarray(obs, dtype=float))


# -- 1D scores ---------------------------------------------------------------

def test_rmse_identical_is_zero():
    assert rmse(pair([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])) == 0.0


def test_rmse_constant_error():
    assert rmse(pair([2.0, 3.0], [1.0, 2.0])) == 1.0


def test_rmse_evaluates_formula():
    assert rmse(pair([3.0, 4.0], [0.0, 0.0])) == pytest.approx(math.sqrt(12.5), rel=1e-12)


def test_maae_identical_is_zero():
    assert maae(pair([5.0, 5.0], [5.0, 5.0])) == 0.0


def test_maae_takes_largest_magnitude():
    obs = np.array([10.0, 10.0, 10.0])
    model = obs + np.array([0.1, -1.87, 0.3])
    assert maae(SeriesPair(np.arange(3.0), model, obs)) == pytest.approx(1.87, rel=1e-12)


def test_maae_single_sample():
    assert maae(pair([0.0], [2.0])) == 2.0


def test_nse_perfect_model_is_one():
    assert nse(pair([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])) == 1.0


def test_nse_mean_model_is_zero():
    obs = np.array([1.0, 2.0, 3.0])
    assert nse(pair(np.full(3, obs.mean()), obs)) == 0.0


def test_nse_worked_example():
    assert nse(pair([1.0, 2.0, 4.0], [1.0, 2.0, 3.0])) == pytest.approx(0.5, rel=1e-12)


def test_nse_rejects_constant_obs():
    with pytest.raises(ValueError):
        nse(pair([1.0, 2.0], [3.0, 3.0]))


def test_empty_pair_rejected():
    with pytest.raises(ValueError):
        SeriesPair(np.array([]), np.array([]), np.array([]))


def test_shift_invariance():
    model = np.array([1.0, 2.5, 2.0, 4.0])
    obs = np.array([1.2, 2.0, 2.5, 3.5])
    p0 = pair(model, obs)
    p1 = pair(model + 7.3, obs + 7.3)
    assert rmse(p0) == pytest.approx(rmse(p1), rel=1e-12)
    assert nse(p0) == pytest.approx(nse(p1), rel=1e-12)


# -- contingency --------------------------------------------------------------

def test_contingency_perfect_agreement():
    sim = np.array([[1, 0], [1, 0]], dtype=bool)
    counts, raster = contingency(sim, sim)
    assert counts.fp == 0 and counts.fn == 0
    assert counts.tp == 2 and counts.tn == 2


def test_contingency_hand_count():
    sim = np.array([[1, 1], [0, 0]], dtype=bool)
    obs = np.array([[1, 0], [1, 0]], dtype=bool)
    counts, raster = contingency(sim, obs)
    assert (counts.tp, counts.fp, counts.fn, counts.tn) == (1, 1, 1, 1)
    assert raster[0, 0] == CODE_TP
    assert raster[0, 1] == CODE_FP
    assert raster[1, 0] == CODE_FN
    assert raster[1, 1] == CODE_TN


def test_contingency_with_exclusion():
    sim = np.array([[1, 1], [0, 0]], dtype=bool)
    obs = np.array([[1, 0], [1, 0]], dtype=bool)
    excl = np.array([[0, 1], [0, 0]], dtype=bool)
    counts, raster = contingency(sim, obs, excl)
    assert (counts.tp, counts.fp, counts.fn, counts.tn) == (1, 0, 1, 1)
    assert raster[0, 1] == CODE_EXCLUDED
    assert counts.total == 3


def test_contingency_dimension_mismatch():
    with pytest.raises(ValueError, match="dimensions"):
        contingency(np.zeros((2, 2), bool), np.zeros((3, 2), bool))


def test_contingency_swap_symmetry():
    rng = np.random.default_rng(0)
    sim = rng.random((16, 16)) > 0.6
    obs = rng.random((16, 16)) > 0.4
    a, _ = contingency(sim, obs)
    b, _ = contingency(obs, sim)
    assert (a.tp, a.tn) == (b.tp, b.tn)
    assert (a.fp, a.fn) == (b.fn, b.fp)


# -- counts-based scores --------------------------------------------------------

def test_csi_perfect():
    assert csi(ContingencyCounts(tp=5, fp=0, tn=3, fn=0)) == 1.0


def test_csi_worked_example():
    assert csi(ContingencyCounts(tp=1, fp=1, tn=0, fn=1)) == pytest.approx(1 / 3, rel=1e-12)


def test_csi_undefined_marker():
    assert math.isnan(csi(ContingencyCounts(tp=0, fp=0, tn=9, fn=0)))


def test_f1_harmonic_fixed_point():
    # precision == recall == p  ->  F1 == p
    c = ContingencyCounts(tp=3, fp=1, tn=5, fn=1)
    assert f_beta(c) == pytest.approx(0.75, rel=1e-12)


def test_f1_worked_example():
    assert f_beta(ContingencyCounts(tp=1, fp=1, tn=0, fn=1)) == pytest.approx(0.5, rel=1e-12)


def test_f2_worked_example():
    c = ContingencyCounts(tp=4, fp=1, tn=0, fn=1)
    assert f_beta(c, beta=2.0) == pytest.approx(0.8, rel=1e-12)


def test_f_beta_zero_convention():
    assert f_beta(ContingencyCounts(tp=0, fp=3, tn=1, fn=0)) == 0.0
    assert f_beta(ContingencyCounts(tp=0, fp=0, tn=1, fn=3)) == 0.0
    assert math.isnan(f_beta(ContingencyCounts(tp=0, fp=0, tn=4, fn=0)))


def test_kappa_paper_mode():
    c = ContingencyCounts(tp=40, fp=10, tn=40, fn=10)
    assert kappa(c, mode="paper") == pytest.approx((0.8 - 0.25) / 0.75, rel=1e-12)


def test_kappa_standard_mode():
    c = ContingencyCounts(tp=40, fp=10, tn=40, fn=10)
    assert kappa(c, mode="standard") == pytest.approx(0.6, rel=1e-12)


def test_kappa_perfect_agreement():
    c = ContingencyCounts(tp=30, fp=0, tn=70, fn=0)
    assert kappa(c, mode="paper") == 1.0
    assert kappa(c, mode="standard") == 1.0


def test_kappa_pe_one_marker():
    # everything flooded in both: p_e == 1 in paper mode
    assert math.isnan(kappa(ContingencyCounts(tp=10, fp=0, tn=0, fn=0), mode="paper"))


def test_csi_never_exceeds_f1():
    rng = np.random.default_rng(5)
    for _ in range(200):
        tp, fp, tn, fn = rng.integers(0, 50, 4)
        c = ContingencyCounts(int(tp), int(fp), int(tn), int(fn))
        s, f = csi(c), f_beta(c)
        if not (math.isnan(s) or math.isnan(f)):
            assert s <= f + 1e-15


# -- brute-force oracle ---------------------------------------------------------

def pixel_loop_scores(sim, obs, excl, beta=1.0, mode="paper"):
    """Independent recomputation straight from pixel loops."""
    tp = fp = tn = fn = 0
    ny, nx = sim.shape
    for i in range(ny):
        for j in range(nx):
            if excl is not None and excl[i, j]:
                continue
            s, o = sim[i, j], obs[i, j]
            if s and o:
                tp += 1
            elif s and not o:
                fp += 1
            elif not s and o:
                fn += 1
            else:
                tn += 1
    n = tp + fp + tn + fn
    out = {}
    out["csi"] = math.nan if tp + fp + fn == 0 else tp / (tp + fp + fn)
    if tp == 0:
        out["f"] = math.nan if (fp == 0 and fn == 0) else 0.0
    else:
        p = tp / (tp + fp)
        r = tp / (tp + fn)
        out["f"] = (1 + beta ** 2) * p * r / (beta ** 2 * p + r)
    if n == 0:
        out["kappa"] = math.nan
    else:
        p_o = (tp + tn) / n
        p_e = ((tp + fn) / n) * ((tp + fp) / n)
        if mode == "standard":
            p_e += ((tn + fn) / n) * ((tn + fp) / n)
        out["kappa"] = math.nan if p_e >= 1 else (p_o - p_e) / (1 - p_e)
    return out


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), use_excl=st.booleans())
def test_scores_match_pixel_loops(seed, use_excl):
    rng = np.random.default_rng(seed)
    shape = (24, 31)
    sim = rng.random(shape) > rng.uniform(0.2, 0.8)
    obs = rng.random(shape) > rng.uniform(0.2, 0.8)
    excl = rng.random(shape) > 0.9 if use_excl else None
    counts, _ = contingency(sim, obs, excl)
    ref = pixel_loop_scores(sim, obs, excl)

    def same(a, b):
        return (math.isnan(a) and math.isnan(b)) or a == b

    assert same(csi(counts), ref["csi"])
    assert same(f_beta(counts), ref["f"])
    assert same(kappa(counts), ref["kappa"])


# -- rasterize ------------------------------------------------------------------

def test_rasterize_threshold_is_strict():
    h = np.array([[0.051, 0.049], [0.05, 0.2]])
    mask = rasterize_flood_mask(h)
    assert mask.wet[0, 0]
    assert not mask.wet[0, 1]
    assert not mask.wet[1, 0]  # exactly at threshold counts as dry
    assert mask.wet[1, 1]


def test_rasterize_accepts_state_and_grid_exclusion():
    from floodlab.grid import ScenarioGrid
    from floodlab.swe import RiverState
    h = np.array([[1.0, 0.0], [0.2, 0.01]])
    excl = np.array([[0, 1], [0, 0]], dtype=bool)
    grid = ScenarioGrid(1.0, 1.0, np.zeros((2, 2)), np.zeros((2, 2), int), exclusion=excl)
    state = RiverState(0.0, h, np.zeros_like(h), np.zeros_like(h))
    mask = rasterize_flood_mask(state, grid)
    assert mask.wet[0, 0] and not mask.wet[1, 1]
    assert mask.exclusion[0, 1]


def test_format_score_na():
    assert format_score(math.nan) == "NA"
    assert format_score(0.5) == "0.5"
