import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import erf_mass_fraction
from lgmtraj.lgm import (
    CREATION_RATIO,
    PARAM_COLUMNS,
    GaussianModifier,
    ModifierBank,
    TooLateError,
    eval_lgm,
    lgm_mass_fraction,
    make_and_evaluate,
    make_lgm,
    pack_requests,
)

times = st.floats(-100, 100, allow_nan=False)
leads = st.floats(1e-3, 20, allow_nan=False)
vec = st.tuples(*[st.floats(-10, 10, allow_nan=False)] * 3)


def test_peak_moves_waypoint_exactly():
    m = make_lgm([1, 2, 3], [1.5, 2, 2], t_w=4.0, t_mod=3.0)
    assert np.allclose(eval_lgm(m, 4.0), [0.5, 0, -1])
    assert m.width == pytest.approx(1.0 / 3.5)


def test_creation_ratio_value():
    assert CREATION_RATIO == pytest.approx(math.exp(-6.125), rel=1e-15)


@given(times, leads, vec, st.booleans())
def test_property_creation_ratio(t_w, lead, amp, after):
    a = np.array(amp)
    if np.linalg.norm(a) < 1e-6:
        a = a + 1.0
    t_mod = t_w + lead if after else t_w - lead
    m = make_lgm(np.zeros(3), a, t_w, t_mod)
    ratio = np.linalg.norm(eval_lgm(m, t_mod)) / np.linalg.norm(a)
    assert ratio == pytest.approx(math.exp(-6.125), rel=1e-9)


def test_too_late():
    with pytest.raises(TooLateError):
        make_lgm([0, 0, 0], [1, 0, 0], 2.0, 2.0)
    with pytest.raises(TooLateError):
        pack_requests(np.zeros((1, 3)), np.ones((1, 3)), [1.0], [1.0])


def test_width_must_be_positive():
    with pytest.raises(ValueError):
        GaussianModifier([1, 0, 0], 0.0, 0.0)
    with pytest.raises(ValueError):
        ModifierBank(np.array([[1, 0, 0, 0, -1.0]]))


@pytest.mark.parametrize("order", [1, 2, 3])
def test_derivatives_match_finite_differences(order):
    m = make_lgm([0, 0, 0], [0.3, -0.2, 0.1], t_w=2.0, t_mod=1.3)
    h = 1e-4
    for t in np.linspace(1.2, 2.8, 17):
        fd = (eval_lgm(m, t + h, order - 1) - eval_lgm(m, t - h, order - 1)) / (2 * h)
        assert np.allclose(eval_lgm(m, t, order), fd, rtol=1e-6, atol=1e-6)


def test_vectorised_evaluation():
    m = make_lgm([0, 0, 0], [1, 2, 3], 1.0, 0.5)
    ts = np.linspace(0, 2, 7)
    out = eval_lgm(m, ts, 1)
    assert out.shape == (7, 3)
    for i, t in enumerate(ts):
        assert np.allclose(out[i], eval_lgm(m, t, 1))


def test_order_validation():
    m = make_lgm([0, 0, 0], [1, 0, 0], 1.0, 0.5)
    with pytest.raises(ValueError):
        eval_lgm(m, 1.0, 4)
    with pytest.raises(ValueError):
        ModifierBank.from_modifiers([m])(1.0, 4)


@pytest.mark.parametrize("h", [0.5, 1.0, 2.0, 3.5])
def test_mass_fraction_matches_direct_integral(h):
    m = make_lgm([0, 0, 0], [1, 0, 0], 1.0, 0.0)
    assert lgm_mass_fraction(m, h) == pytest.approx(erf_mass_fraction(h), rel=1e-9)


def test_bank_sums_modifiers(rng):
    mods = [
        make_lgm(rng.normal(size=3), rng.normal(size=3), t_w, t_w - lead)
        for t_w, lead in zip(rng.uniform(0, 5, 9), rng.uniform(0.1, 2, 9))
    ]
    bank = ModifierBank.from_modifiers(mods)
    assert len(bank) == 9
    for t in np.linspace(-1, 6, 15):
        stack = bank.evaluate_all(t)
        for order in range(4):
            expected = sum(eval_lgm(m, t, order) for m in mods)
            assert np.allclose(bank(t, order), expected, atol=1e-12)
            if order < 3:
                assert np.allclose(stack[order], expected, atol=1e-12)


def test_empty_bank_is_zero():
    bank = ModifierBank()
    assert len(bank) == 0
    assert np.all(bank.evaluate_all(1.0) == 0)
    assert np.all(bank(np.linspace(0, 1, 4), 2) == 0)


def test_bank_is_immutable():
    bank = ModifierBank.from_modifiers([make_lgm([0, 0, 0], [1, 0, 0], 1.0, 0.5)])
    with pytest.raises(ValueError):
        bank.params[0, 0] = 5.0
    grown = bank.appended(make_lgm([0, 0, 0], [0, 1, 0], 2.0, 1.5))
    assert len(bank) == 1 and len(grown) == 2


def test_fused_kernel_matches_reference(rng):
    k = 37
    cur, new = rng.normal(size=(k, 3)), rng.normal(size=(k, 3))
    t_w = rng.uniform(1, 9, k)
    t_mod = t_w - rng.uniform(0.05, 2, k)
    req = pack_requests(cur, new, t_w, t_mod)
    params = np.empty((k, PARAM_COLUMNS))
    values = np.empty((3, 3))
    t = 4.2
    make_and_evaluate(req, t, params, values)
    mods = [make_lgm(c, n, a, b) for c, n, a, b in zip(cur, new, t_w, t_mod)]
    ref = ModifierBank.from_modifiers(mods)
    assert np.allclose(params, ref.params, rtol=1e-14, atol=1e-14)
    assert np.allclose(values, ref.evaluate_all(t), rtol=1e-12, atol=1e-14)


def test_pack_requests_shape_check():
    with pytest.raises(ValueError):
        pack_requests(np.zeros((2, 3)), np.zeros((1, 3)), [1, 2], [0, 0])


@given(st.lists(st.tuples(vec, st.floats(0.05, 3)), min_size=1, max_size=6))
def test_property_stacked_modifiers_land_latest_request(requests):
    # each new modifier is sized against the composite so far
    t_w = 5.0
    base = np.array([1.0, 1.0, 1.0])
    mods = []
    for target, lead in requests:
        current = base + sum((eval_lgm(m, t_w) for m in mods), np.zeros(3))
        mods.append(make_lgm(current, target, t_w, t_w - lead))
    final = base + sum(eval_lgm(m, t_w) for m in mods)
    assert np.allclose(final, requests[-1][0], atol=1e-9)


@given(st.floats(0.05, 10), st.floats(0, 40), vec)
def test_property_symmetry_and_peak_bound(sigma, k, amp):
    m = GaussianModifier(amp, 3.0, sigma)
    d = k * sigma / 10
    for order, sign in ((0, 1), (1, -1), (2, 1)):
        assert np.allclose(eval_lgm(m, 3.0 + d, order), sign * eval_lgm(m, 3.0 - d, order), atol=1e-12)
    assert np.linalg.norm(eval_lgm(m, 3.0 + d)) <= np.linalg.norm(amp) + 1e-12
