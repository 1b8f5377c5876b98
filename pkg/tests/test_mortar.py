import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from fluxmortar.geometry import Interface, TracePartition, reference_config, build_decomposition, refine
from fluxmortar.mortar import (
    FLAT, SHARP, MortarConditionError, MortarSpace, check_mortar_condition, evaluate_mortar,
    gauss_rule, mortar_spaces, project, project_flat, project_sharp, weak_jump,
)


def make_space(breaks_i, breaks_j, nodes, order):
    length = nodes[-1]
    iface = Interface((0, 1), (0.0, 0.0), float(length), 0, np.asarray(nodes, float))
    part = lambda b: TracePartition(np.arange(len(b) - 1), np.asarray(b, float))
    return MortarSpace(iface, order, part(breaks_i), part(breaks_j))


def random_breaks(rng, n, length=1.0):
    cuts = np.sort(rng.uniform(0, length, n - 1))
    b = np.concatenate([[0.0], cuts, [length]])
    if np.min(np.diff(b)) < 1e-3:
        return np.linspace(0, length, n + 1)
    return b


breaks_strategy = st.integers(1, 7)


def test_flat_examples():
    sp_ = make_space([0, 0.5, 1], [0, 1 / 3, 2 / 3, 1], [0, 1], 1)
    ones = project_flat(lambda s: np.ones_like(s), sp_, 0)
    assert np.allclose(ones.values, 1)
    ramp = project_flat(lambda s: s, sp_, 0)
    assert np.allclose(ramp.values, [0.25, 0.75])
    # side j sees -lambda
    assert np.allclose(project_flat(lambda s: s, sp_, 1).values, -np.array([1 / 6, 0.5, 5 / 6]))


def test_flat_idempotent_on_trace_functions():
    b = [0, 0.2, 0.5, 1.0]
    sp_ = make_space(b, b, [0, 0.5, 1], 0)
    vals = np.array([3.0, -1.0, 2.0])
    pw = lambda s: vals[np.clip(np.searchsorted(b, s, side="right") - 1, 0, 2)]
    assert np.allclose(project_flat(pw, sp_, 0).values, vals, atol=1e-13)


def test_merged_quadrature_exact_for_hat():
    # P1 hat across faces that do not align with mortar nodes
    sp_ = make_space([0, 0.3, 0.7, 1.0], [0, 1.0], [0, 0.5, 1.0], 1)
    psi = project_flat(np.array([0.0, 1.0, 0.0]), sp_, 0).values
    # hat = 2s on [0, 0.5]: face averages 0.09/0.3, 0.32/0.4, 0.09/0.3
    assert np.allclose(psi, [0.3, 0.8, 0.3], atol=1e-14)


def _overlap(a, b, c, d):
    return max(0.0, min(b, d) - max(a, c))


def test_sharp_dense_oracle():
    bi, bj, nodes = [0, 0.5, 1], [0, 1 / 3, 2 / 3, 1], [0, 0.5, 1]
    sp_ = make_space(bi, bj, nodes, 0)
    psi_i, psi_j, chi = project_sharp(lambda s: s, sp_)
    # independent assembly with analytic overlap lengths and face integrals of s
    Li, Lj = np.diff(bi), np.diff(bj)
    Ci = np.array([[_overlap(nodes[k], nodes[k + 1], bi[f], bi[f + 1]) for f in range(2)] for k in range(2)])
    Cj = np.array([[_overlap(nodes[k], nodes[k + 1], bj[f], bj[f + 1]) for f in range(3)] for k in range(2)])
    mom = lambda b: np.array([(b[f + 1] ** 2 - b[f] ** 2) / 2 for f in range(len(b) - 1)])
    K = np.zeros((7, 7))
    K[:2, :2], K[2:5, 2:5] = np.diag(Li), np.diag(Lj)
    K[:2, 5:], K[2:5, 5:] = Ci.T, Cj.T
    K[5:, :2], K[5:, 2:5] = Ci, Cj
    rhs = np.concatenate([mom(bi), -mom(bj), np.zeros(2)])
    ref = np.linalg.solve(K, rhs)
    assert np.allclose(psi_i.values, ref[:2], atol=1e-13)
    assert np.allclose(psi_j.values, ref[2:5], atol=1e-13)
    assert np.allclose(chi, ref[5:], atol=1e-13)


def test_sharp_conforming():
    b = [0, 0.25, 0.5, 1.0]
    sp_ = make_space(b, b, b, 0)
    lam = np.array([1.0, -2.0, 0.5])
    psi_i, psi_j, chi = project_sharp(lam, sp_)
    assert np.allclose(psi_i.values, lam, atol=1e-13)
    assert np.allclose(psi_j.values, -lam, atol=1e-13)
    assert np.allclose(chi, 0, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(breaks_strategy, breaks_strategy, st.integers(1, 3), st.integers(0, 1), st.integers(0, 2**31))
def test_sharp_is_l2_projection_onto_weakly_continuous(ni, nj, m, order, seed):
    rng = np.random.default_rng(seed)
    bi, bj = random_breaks(rng, ni + m), random_breaks(rng, nj + m)
    sp_ = make_space(bi, bj, np.linspace(0, 1, m + 1), order)
    if check_mortar_condition(sp_, FLAT) == 0:
        return
    lam = rng.normal(size=sp_.ndof)
    psi_i, psi_j, _ = project_sharp(lam, sp_)
    psi = np.concatenate([psi_i.values, psi_j.values])
    # oracle: weighted least squares on the null space of the continuity constraints
    L = np.concatenate([np.diff(bi), np.diff(bj)])
    C = np.hstack([sp_.moments(0), sp_.moments(1)])
    Z = sla.null_space(C)
    b = np.concatenate([sp_.face_integrals(0, lam), -sp_.face_integrals(1, lam)])
    ref = Z @ np.linalg.solve(Z.T @ (L[:, None] * Z), Z.T @ b)
    assert np.allclose(psi, ref, atol=1e-10 * max(1, np.abs(ref).max()))


@settings(max_examples=50, deadline=None)
@given(breaks_strategy, breaks_strategy, st.integers(1, 3), st.integers(0, 1), st.integers(0, 2**31))
def test_projection_invariants(ni, nj, m, order, seed):
    rng = np.random.default_rng(seed)
    bi, bj = random_breaks(rng, ni + m), random_breaks(rng, nj + m)
    sp_ = make_space(bi, bj, np.linspace(0, 1, m + 1), order)
    if check_mortar_condition(sp_, FLAT) == 0:
        return
    # degree-5 polynomials are integrated exactly by the interface quadrature
    poly = np.polynomial.Polynomial(rng.normal(size=6))
    lam = poly
    mean = poly.integ()(1.0) - poly.integ()(0.0)
    pts, wts = gauss_rule(np.linspace(0, 1, 65))
    l1 = wts @ np.abs(lam(pts))
    psi_i, psi_j, _ = project_sharp(lam, sp_)
    assert np.max(np.abs(weak_jump(sp_, psi_i, psi_j))) <= 1e-11 * max(1, np.linalg.norm(psi_i.values))
    for psi, sign, b in ((psi_i, 1, bi), (psi_j, -1, bj)):
        assert abs(sign * mean - psi.values @ np.diff(b)) <= 1e-12 * max(1, l1) * 10
    fi = project_flat(lam, sp_, 0)
    assert abs(mean - fi.values @ np.diff(bi)) <= 1e-12 * max(1, l1) * 10
    # flat idempotence: re-projecting the piecewise-constant result does nothing
    pw = lambda s: fi.values[np.clip(np.searchsorted(bi, s, side="right") - 1, 0, len(bi) - 2)]
    assert np.allclose(project_flat(pw, sp_, 0).values, fi.values, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**31))
def test_conforming_limit_flat_equals_sharp(n, m, seed):
    rng = np.random.default_rng(seed)
    nodes = np.linspace(0, 1, m + 1)
    b = np.unique(np.concatenate([nodes, random_breaks(rng, n)]))
    sp_ = make_space(b, b, nodes, 0)
    lam = rng.normal(size=sp_.ndof)
    fi, fj = project(lam, sp_, FLAT)
    si, sj = project(lam, sp_, SHARP)
    assert np.allclose(fi.values, si.values, atol=1e-12)
    assert np.allclose(fj.values, sj.values, atol=1e-12)


def test_mortar_condition_nested():
    sp_ = make_space(np.linspace(0, 1, 7), np.linspace(0, 1, 5), [0, 0.5, 1], 0)
    assert check_mortar_condition(sp_, FLAT) >= 1
    assert check_mortar_condition(sp_, SHARP) >= 1


def test_mortar_condition_violated():
    sp_ = make_space([0, 1], [0, 0.5, 1], np.linspace(0, 1, 9), 1)
    assert check_mortar_condition(sp_, FLAT) == 0
    assert check_mortar_condition(sp_, SHARP) == 0
    with pytest.raises(MortarConditionError, match=r"\(0, 1\)"):
        project_sharp(lambda s: s, sp_)


def test_mortar_condition_finer_mortar_smaller():
    dd = refine(build_decomposition(reference_config(0.25)), 5)
    dd6 = refine(build_decomposition(reference_config(1 / 6)), 5)
    for order in (0, 1):
        c4 = [check_mortar_condition(s) for s in mortar_spaces(dd, order)]
        c6 = [check_mortar_condition(s) for s in mortar_spaces(dd6, order)]
        assert all(a > b > 0 for a, b in zip(c4, c6))


def test_evaluate_mortar(ref_dd):
    sp_ = mortar_spaces(ref_dd, 0)
    iface = ref_dd.interface((0, 2))
    c = np.zeros(sp_.ndof)
    c[sp_.dofs(iface.id)] = [2.0, 5.0]
    lam = sp_.function(c)
    assert np.allclose(evaluate_mortar(lam, iface.id, [0.125, 0.375]), [2.0, 5.0])
    with pytest.raises(ValueError):
        evaluate_mortar(lam, iface.id, [0.6])


def test_evaluate_p1_linear():
    sp_ = make_space([0, 1], [0, 1], [0, 1], 1)
    assert np.allclose(sp_.basis([0.5]) @ np.array([0.0, 1.0]), 0.5)


def test_gram_identity(rng):
    sp_ = make_space([0, 1], [0, 1], np.sort(np.concatenate([[0, 1], rng.uniform(0, 1, 3)])), 1)
    c = rng.normal(size=sp_.ndof)
    x = np.linspace(0, 1, 400001)
    v = sp_.basis(x) @ c
    assert np.isclose(np.trapezoid(v**2, x), c @ sp_.gram @ c, rtol=1e-8)


def test_constant_in_space(ref_dd):
    for order in (0, 1):
        for sp_ in mortar_spaces(ref_dd, order):
            s = np.linspace(0, sp_.length, 17)
            assert np.allclose(sp_.basis(s) @ np.ones(sp_.ndof), 1.0)


def test_p1_no_coupling_across_junctions(ref_dd):
    sp_ = mortar_spaces(ref_dd, 1)
    offsets = [sp_.dofs(s.id) for s in sp_]
    assert sum(o.stop - o.start for o in offsets) == sp_.ndof == 4 * 3
