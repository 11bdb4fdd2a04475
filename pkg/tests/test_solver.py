import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unfoldseg import solve
from unfoldseg.cos_model import SolverConfig, background_energy, build_context, surrogate_mask_energy
from unfoldseg.errors import InvalidArgumentError
from unfoldseg.solver import (
    background_closed_form,
    mask_closed_form,
    prox_background_explicit,
    prox_mask_explicit,
    tv_sweep,
)

from oracles import coordinatewise_minimiser, loop_surrogate


def test_mask_closed_form_example():
    # alpha = 0, C = 1, B = 0, M_prev = 0, mu = 1: (0 + 1) / (1 + 1)
    c = np.ones((1, 1, 1))
    ctx = build_context(np.zeros((1, 1)), np.zeros((1, 1)))
    out = mask_closed_form(c, np.zeros_like(c), ctx, SolverConfig(alpha=0.0))
    assert out[0, 0] == 0.5


def test_background_closed_form_example():
    # lambda = 1, B_prev = 0, C = 0.8, M = 0: 0.8 / 2
    out = background_closed_form(np.full((1, 1, 1), 0.8), np.zeros((1, 1, 1)), np.zeros((1, 1)), 1.0)
    assert out[0, 0, 0] == pytest.approx(0.4, abs=1e-16)
    with pytest.raises(InvalidArgumentError):
        background_closed_form(np.ones((1, 1, 1)), np.zeros((1, 1, 1)), np.zeros((1, 1)), -0.5)


def test_mask_closed_form_matches_loop_minimiser(rng):
    for ch in (1, 3):
        c, b = rng.random((3, 4, ch)), rng.random((3, 4, ch))
        m_prev, m_prev2 = rng.random((3, 4)), rng.random((3, 4))
        cfg = SolverConfig(alpha=0.7, mu=0.3, lipschitz=1.5)
        want = coordinatewise_minimiser(
            lambda m: loop_surrogate(m, c, b, m_prev, m_prev2, 0.7, 0.3, 1.5, 1e-3), (3, 4)
        )
        got = mask_closed_form(c, b, build_context(m_prev, m_prev2), cfg)
        assert np.max(np.abs(got - want)) < 1e-9


def test_background_closed_form_matches_loop_minimiser(rng):
    c, b_prev, m = rng.random((3, 3, 3)), rng.random((3, 3, 3)), rng.random((3, 3))
    want = coordinatewise_minimiser(lambda b: background_energy(b, c, m, b_prev, 0.6), (3, 3, 3))
    got = background_closed_form(c, b_prev, m, 0.6)
    assert np.max(np.abs(got - want)) < 1e-10


def test_tv_sweep_examples():
    flat = np.full((4, 4), 0.3)
    assert np.array_equal(tv_sweep(flat, 0.1), flat)
    step = np.zeros((1, 2))
    step[0, 1] = 1.0
    # one step of TV pulls the two sides towards each other
    assert np.allclose(tv_sweep(step, 0.1), [[0.1, 0.9]])


def test_tv_sweep_preserves_sum(rng):
    x = rng.random((6, 5))
    assert np.sum(tv_sweep(x, 0.2)) == pytest.approx(np.sum(x), abs=1e-12)


def test_prox_examples(rng):
    m_hat = np.array([[-0.3, 0.4], [1.2, 0.9]])
    assert np.array_equal(prox_mask_explicit(m_hat, SolverConfig()), [[0.0, 0.4], [1.0, 0.9]])
    tv = prox_mask_explicit(rng.random((5, 5)) * 1.4 - 0.2, SolverConfig(mask_prox="clamp+tv"))
    assert tv.min() >= 0 and tv.max() <= 1
    flat = np.full((5, 5, 3), 0.6)
    assert np.allclose(prox_background_explicit(flat, SolverConfig(background_prox="gaussian")), 0.6)
    noisy = rng.random((6, 6, 1))
    smooth = prox_background_explicit(noisy, SolverConfig(background_prox="gaussian"))
    assert np.var(smooth) < np.var(noisy)


def _two_tone(fg=0.95, bg=0.55, n=16):
    gt = np.zeros((n, n))
    gt[4:12, 5:11] = 1.0
    return np.where(gt > 0, fg, bg)[..., None], gt


def test_solve_two_tone_recovers_bright_object():
    c, gt = _two_tone()
    res = solve(c)
    assert len(res.stages) == 4 and len(res.trace) == 4
    assert np.array_equal(res.binary_mask(), gt)


def test_solve_constant_image_is_uniform():
    res = solve(np.full((6, 7, 3), 0.4))
    assert np.ptp(res.mask) == 0.0


def test_solve_validates_input():
    with pytest.raises(InvalidArgumentError):
        solve(np.full((4, 4), 1.5))
    with pytest.raises(InvalidArgumentError):
        solve(np.full((4, 4), 0.5), init_mask=np.zeros((3, 4)))


def test_solve_init_mask_is_used():
    c, gt = _two_tone()
    a = solve(c, SolverConfig(stages=1))
    b = solve(c, SolverConfig(stages=1), init_mask=gt)
    assert not np.array_equal(a.mask, b.mask)


def test_more_stages_separate_more():
    c, gt = _two_tone()
    gaps = []
    for k in (1, 2, 4):
        m = solve(c, SolverConfig(stages=k)).mask
        gaps.append(m[gt > 0].mean() - m[gt == 0].mean())
    assert gaps[0] < gaps[1] < gaps[2]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["clamp", "clamp+tv"]), st.sampled_from(["clamp", "gaussian"]))
def test_solve_invariants(seed, mprox, bprox):
    r = np.random.default_rng(seed)
    c = r.random((6, 6, int(r.choice([1, 3]))))
    cfg = SolverConfig(stages=3, mask_prox=mprox, background_prox=bprox)
    res = solve(c, cfg)
    for st_, tr in zip(res.stages, res.trace):
        assert st_.m.min() >= 0 and st_.m.max() <= 1
        assert st_.b.min() >= 0 and st_.b.max() <= 1
        # each closed-form update never increases its own sub-problem energy
        assert tr.surrogate_after <= tr.surrogate_before + 1e-12
        assert tr.background_after <= tr.background_before + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_closed_form_is_global_minimum(seed):
    r = np.random.default_rng(seed)
    c, b = r.random((3, 3, 1)), r.random((3, 3, 1))
    ctx = build_context(r.random((3, 3)), r.random((3, 3)))
    cfg = SolverConfig(alpha=float(r.random()), mu=0.1 + float(r.random()))
    m = mask_closed_form(c, b, ctx, cfg)
    e0 = surrogate_mask_energy(m, c, b, ctx, cfg)
    for _ in range(5):
        assert surrogate_mask_energy(m + 1e-3 * r.standard_normal((3, 3)), c, b, ctx, cfg) >= e0
