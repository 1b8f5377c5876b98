import numpy as np
import pytest

from fluxmortar.extension import extend, extend_minimal, trace_totals, weak_flux_jump
from fluxmortar.mortar import FLAT, SHARP, VARIANTS, mortar_spaces, project
from fluxmortar.solver import assemble_systems


@pytest.fixture(scope="module")
def grid3(grid3_dd):
    return grid3_dd, assemble_systems(grid3_dd)


def mean_outflow(spaces, lam, sid):
    """|Omega_s|^-1 (lambda_s, 1) over the boundary of subdomain ``sid``."""
    dd = spaces.dd
    total = 0.0
    for f in dd.interfaces_of(sid):
        sp_ = spaces.space(f.id)
        total += sp_.signs[sid] * (sp_.gram.sum(axis=0) @ lam.on(f.id))
    return total / dd.subdomains[sid].area


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("order", [0, 1])
def test_zero(ref_dd, variant, order):
    spaces = mortar_spaces(ref_dd, order)
    systems = assemble_systems(ref_dd)
    for res in (extend(spaces.function(), variant, systems), extend_minimal(spaces.function(), variant, systems)):
        for st_ in res.states:
            assert not np.any(st_.face_fluxes) and not np.any(st_.cell_pressures)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("order", [0, 1])
def test_divergence_law(grid3, variant, order, rng):
    dd, systems = grid3
    spaces = mortar_spaces(dd, order)
    for _ in range(5):
        lam = spaces.function(rng.normal(size=spaces.ndof))
        res = extend(lam, variant, systems)
        for local, st_ in zip(systems, res.states):
            div = local.div @ st_.face_fluxes / local.cell_volumes
            if local.s_dim:
                lam_bar = mean_outflow(spaces, lam, local.subdomain_id)
                assert np.allclose(div, lam_bar, atol=1e-11)
                assert np.isclose(st_.r, lam_bar, atol=1e-11)
            else:
                assert np.max(np.abs(div)) < 1e-11


def test_zero_mean_interior_is_divergence_free(grid3, rng):
    dd, systems = grid3
    spaces = mortar_spaces(dd, 0)
    lam = rng.normal(size=spaces.ndof)
    # remove the outflow mean of the center subdomain through one of its interfaces
    f = dd.interfaces_of(4)[0]
    sp_ = spaces.space(f.id)
    mean = mean_outflow(spaces, spaces.function(lam), 4) * dd.subdomains[4].area
    lam[spaces.dofs(f.id)] -= sp_.signs[4] * mean / sp_.length
    res = extend(spaces.function(lam), FLAT, systems)
    assert np.max(np.abs(systems[4].div @ res.states[4].face_fluxes)) < 1e-12


@pytest.mark.parametrize("variant", VARIANTS)
def test_traces_equal_projection(ref_dd, variant, rng):
    spaces = mortar_spaces(ref_dd, 1)
    systems = assemble_systems(ref_dd)
    lam = spaces.function(rng.normal(size=spaces.ndof))
    res = extend(lam, variant, systems)
    for local, st_ in zip(systems, res.states):
        tot = trace_totals(local, st_)
        for iid, rows in local.trace_slices.items():
            psi = {p.subdomain_id: p for p in project(lam, spaces.space(iid), variant)}[local.subdomain_id]
            assert np.allclose(tot[rows], psi.values * local.trace_lengths[rows], atol=1e-13)


@pytest.mark.parametrize("order", [0, 1])
def test_weak_jump_distinguishes_variants(ref_dd, order, rng):
    spaces = mortar_spaces(ref_dd, order)
    systems = assemble_systems(ref_dd)
    lam = spaces.function(rng.normal(size=spaces.ndof))
    jf = weak_flux_jump(spaces, systems, extend(lam, FLAT, systems).states)
    js = weak_flux_jump(spaces, systems, extend(lam, SHARP, systems).states)
    assert np.max(np.abs(js)) <= 1e-11
    assert np.max(np.abs(jf)) > 1e-6


def test_minimal_support(grid3, rng):
    dd, systems = grid3
    spaces = mortar_spaces(dd, 1)
    mu = spaces.function(rng.normal(size=spaces.ndof))
    res = extend_minimal(mu, FLAT, systems)
    assert res.variant == "minimal"
    for local, st_ in zip(systems, res.states):
        div = local.div @ st_.face_fluxes
        near = np.zeros(local.grid.n_cells, bool)
        near[local.trace_cells] = True
        assert np.all(div[~near] == 0)
        free_interior = np.setdiff1d(local.free_faces, local.dirichlet_faces)
        assert not np.any(st_.face_fluxes[free_interior])
        assert not np.any(st_.cell_pressures)


@pytest.mark.parametrize("variant", VARIANTS)
def test_minimal_divergence_theorem(grid3, variant, rng):
    dd, systems = grid3
    spaces = mortar_spaces(dd, 1)
    mu = spaces.function(rng.normal(size=spaces.ndof))
    st_ = extend_minimal(mu, variant, systems).states[4]
    total = (systems[4].div @ st_.face_fluxes).sum()
    assert np.isclose(total, mean_outflow(spaces, mu, 4) * dd.subdomains[4].area, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_minimal_and_full_share_traces(grid3, variant, rng):
    dd, systems = grid3
    spaces = mortar_spaces(dd, 0)
    mu = spaces.function(rng.normal(size=spaces.ndof))
    a = extend(mu, variant, systems).states
    b = extend_minimal(mu, variant, systems).states
    for local, sa, sb in zip(systems, a, b):
        assert np.allclose(sa.face_fluxes[local.trace_faces], sb.face_fluxes[local.trace_faces], atol=1e-14)


@pytest.mark.parametrize("variant", VARIANTS)
def test_linearity(grid3, variant, rng):
    dd, systems = grid3
    spaces = mortar_spaces(dd, 1)
    x, y = rng.normal(size=(2, spaces.ndof))
    al, be = 1.7, -0.3
    lhs = extend(spaces.function(al * x + be * y), variant, systems).states
    ex, ey = extend(spaces.function(x), variant, systems).states, extend(spaces.function(y), variant, systems).states
    for s, u, v in zip(lhs, ex, ey):
        assert np.allclose(s.face_fluxes, al * u.face_fluxes + be * v.face_fluxes, atol=1e-11)
        assert np.allclose(s.cell_pressures, al * u.cell_pressures + be * v.cell_pressures, atol=1e-11)
