import numpy as np
import pytest
from scipy.special import erf

from crkpde import (Nls2dProblem, Nls2dState, StagePolynomial, build_crk_tableau, build_grid_2d, et2_step,
                    gauss_legendre_rule, nls2d_case, nls2d_ecl_residual, nls2d_exact_solution, st2_step)
from crkpde.nls2d import (QUINTIC_AMPLITUDE, Nls2dIntegrator, nls2d_charge, nls2d_energy, nls2d_fluxes,
                          nls2d_invariants)

TAB1 = build_crk_tableau(gauss_legendre_rule(1))


@pytest.fixture(scope="module")
def attractive():
    return nls2d_case("gp-attractive")


@pytest.fixture(scope="module")
def repulsive():
    return nls2d_case("gp-repulsive")


def _fd8_second(f, x, h):
    c = [-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560]
    return sum(ck * f(x + (k - 4) * h) for k, ck in enumerate(c)) / h ** 2


def _fd8_first(f, t, h):
    c = [1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280]
    return sum(ck * f(t + (k - 4) * h) for k, ck in enumerate(c)) / h


# --- problem data ---------------------------------------------------------------

def test_case_parameters(attractive, repulsive):
    prob, _ = attractive
    assert prob.grid.shape == (42, 42) and prob.dt == 0.05 and prob.alpha == 0.5
    assert prob.grid.grid_x.x0 == -6.0 and prob.grid.grid_x.length == 12.0
    assert prob.potential_degree == 2 and not prob.is_linear
    prob, _ = repulsive
    assert prob.grid.shape == (36, 36) and prob.dt == 0.1
    assert prob.grid.grid_y.x0 == -8.0 and prob.grid.grid_y.length == 16.0
    quint, _ = nls2d_case("quintic")
    assert quint.potential_degree == 3 and quint.dt == 0.01


def test_unknown_case_rejected():
    with pytest.raises(ValueError):
        nls2d_case("cubic-quintic")
    with pytest.raises(ValueError):
        nls2d_exact_solution("gp-repulsive", 0.0, 0.0, 0.0)


@pytest.mark.parametrize("case", ["gp-attractive", "gp-repulsive", "quintic"])
def test_potential_derivative_matches_finite_differences(case):
    prob, _ = nls2d_case(case, n=8)
    xi = np.random.default_rng(1).uniform(0.1, 2.0, size=prob.grid.shape)
    eps = 1e-6
    fd = (prob.potential(xi + eps) - prob.potential(xi - eps)) / (2 * eps)
    exact = prob.potential_derivative(xi)
    assert np.abs(fd - exact).max() <= 1e-7 * max(1.0, np.abs(exact).max())


def test_derived_fields_are_spectral_derivatives():
    g = build_grid_2d(0.0, 2 * np.pi, 8, 0.0, 2 * np.pi, 6)
    rng = np.random.default_rng(2)
    st = Nls2dState(rng.normal(size=(8, 6)), rng.normal(size=(8, 6)), g)
    Dx, Dy = g.grid_x.diff_matrix, g.grid_y.diff_matrix
    np.testing.assert_allclose(st.v.ravel(), np.kron(Dx, np.eye(6)) @ st.p.ravel(), atol=1e-13)
    np.testing.assert_allclose(st.w.ravel(), np.kron(Dx, np.eye(6)) @ st.q.ravel(), atol=1e-13)
    np.testing.assert_allclose(st.a.ravel(), np.kron(np.eye(8), Dy) @ st.p.ravel(), atol=1e-13)
    np.testing.assert_allclose(st.b.ravel(), np.kron(np.eye(8), Dy) @ st.q.ravel(), atol=1e-13)


def test_state_shape_checked():
    g = build_grid_2d(0.0, 1.0, 4, 0.0, 1.0, 4)
    with pytest.raises(ValueError):
        Nls2dState(np.zeros((4, 5)), np.zeros((4, 4)), g)


def test_energy_density_componentwise():
    prob, state = nls2d_case("gp-attractive", n=12)
    dens, E = nls2d_energy(state, prob)
    xi = state.p ** 2 + state.q ** 2
    c1, c2 = prob.coefficients
    expected = 0.5 * (c1 * xi + c2 * xi ** 2) - 0.5 * prob.alpha * (state.v ** 2 + state.w ** 2 + state.a ** 2
                                                                     + state.b ** 2)
    np.testing.assert_allclose(dens, expected, atol=1e-13)
    assert E == pytest.approx(prob.grid.cell_area * expected.sum(), rel=1e-14)


def test_charge_matches_continuum(attractive):
    _, state = attractive
    continuum = 2.0 * (np.sqrt(np.pi) * erf(6.0)) ** 2
    assert nls2d_charge(state) == pytest.approx(continuum, abs=1e-8)


# --- exact solutions -------------------------------------------------------------

def test_exact_solution_initial_data(attractive):
    prob, state = attractive
    X, Y = prob.grid.mesh
    np.testing.assert_allclose(state.psi, np.sqrt(2) * np.exp(-(X ** 2 + Y ** 2) / 2), atol=1e-15)


@pytest.mark.parametrize("case", ["gp-attractive", "quintic"])
def test_exact_solution_modulus_constant(case):
    x, y = np.meshgrid(np.linspace(-2, 2, 9), np.linspace(-1, 3, 9))
    m0 = np.abs(nls2d_exact_solution(case, x, y, 0.0))
    for t in (0.4, 3.1, 20.0):
        np.testing.assert_allclose(np.abs(nls2d_exact_solution(case, x, y, t)), m0, atol=1e-15)


def test_quintic_period():
    A4 = QUINTIC_AMPLITUDE ** 4
    x, y = np.meshgrid(np.linspace(-1, 1, 5), np.linspace(-1, 1, 5))
    psi0 = nls2d_exact_solution("quintic", x, y, 0.0)
    np.testing.assert_allclose(nls2d_exact_solution("quintic", x, y, 2 * np.pi / A4), psi0, atol=1e-14)


@pytest.mark.parametrize("case,alpha,potential_prime", [
    ("gp-attractive", 0.5,
     lambda x, y, xi: -0.5 * (x ** 2 + y ** 2) - 2 * np.exp(-(x ** 2 + y ** 2)) + xi),
    ("quintic", 1.0,
     lambda x, y, xi: (-0.25 * QUINTIC_AMPLITUDE ** 8 * (x ** 2 + y ** 2)
                       - QUINTIC_AMPLITUDE ** 4 * np.exp(-QUINTIC_AMPLITUDE ** 4 * (x ** 2 + y ** 2)) + xi ** 2)),
])
def test_exact_solution_pde_residual(case, alpha, potential_prime):
    x, y = np.meshgrid(np.linspace(-2, 2, 21), np.linspace(-2, 2, 21), indexing="ij")
    h, t = 1e-2, 0.3
    psi = nls2d_exact_solution(case, x, y, t)
    psi_t = _fd8_first(lambda tt: nls2d_exact_solution(case, x, y, tt), t, h)
    lap = (_fd8_second(lambda xx: nls2d_exact_solution(case, xx, y, t), x, h)
           + _fd8_second(lambda yy: nls2d_exact_solution(case, x, yy, t), y, h))
    res = 1j * psi_t + alpha * lap + potential_prime(x, y, np.abs(psi) ** 2) * psi
    assert np.abs(res).max() <= 1e-8


# --- steps and residual --------------------------------------------------------

@pytest.mark.parametrize("step", [et2_step, st2_step])
def test_zero_state_stays_zero(step):
    prob, _ = nls2d_case("gp-attractive", n=8)
    zero = Nls2dState(np.zeros((8, 8)), np.zeros((8, 8)), prob.grid)
    new, rec = step(zero, prob)
    np.testing.assert_array_equal(new.psi, 0.0)
    assert rec.max_ecl_residual == 0.0 and rec.energy == 0.0


def test_zero_stage_residual_vanishes():
    prob, _ = nls2d_case("gp-repulsive", n=8)
    R, rmax = nls2d_ecl_residual(StagePolynomial(np.zeros((2, 64), dtype=complex)), prob, TAB1)
    np.testing.assert_array_equal(R, 0.0)
    assert rmax == 0.0


def test_missing_stages_rejected(repulsive):
    prob, _ = repulsive
    with pytest.raises(ValueError):
        nls2d_fluxes(None, prob, TAB1)


def test_et2_step_on_attractive_case(attractive):
    prob, state = attractive
    _, rec = et2_step(state, prob)
    assert abs(rec.gee) <= 1e-11
    assert rec.max_ecl_residual <= 1e-10


def test_st2_step_conserves_charge(attractive):
    prob, state = attractive
    _, rec = st2_step(state, prob)
    assert abs(rec.gce_u) <= 1e-11
    assert rec.max_ecl_residual >= 1e-10


def test_repulsive_local_law(repulsive):
    prob, state = repulsive
    integ = Nls2dIntegrator(prob, "et2")
    _, res = integ.advance(state)
    R, rmax = nls2d_ecl_residual(res.stages, prob, TAB1)
    assert rmax <= 1e-10
    vals = res.stages.values.copy()
    vals[1, prob.grid.index(18, 18)] += 1e-4
    _, bumped = nls2d_ecl_residual(StagePolynomial(vals), prob, TAB1)
    assert bumped > 1e-6


def test_quintic_local_law():
    prob, state = nls2d_case("quintic")
    _, rec = et2_step(state, prob)
    assert rec.max_ecl_residual <= 1e-10
    assert abs(rec.gee) <= 1e-11


def test_flux_symmetry(repulsive):
    prob, state = repulsive
    _, res = Nls2dIntegrator(prob, "et2").advance(state)
    F, G = nls2d_fluxes(res.stages, prob, TAB1)
    np.testing.assert_array_equal(F, F.transpose(1, 0, 2))
    np.testing.assert_array_equal(G, G.transpose(0, 2, 1))


def test_fluxes_against_loop_oracle():
    # s = 1: <f> is the mean of the end values and <d_t f> the difference quotient
    prob, state = nls2d_case("gp-attractive", n=6)
    _, res = Nls2dIntegrator(prob, "et2").advance(state)
    z0, z1 = res.stages.values[0].reshape(6, 6), res.stages.values[-1].reshape(6, 6)
    g, dt, alpha = prob.grid, prob.dt, prob.alpha
    mid = 0.5 * (z0 + z1)
    rate = (z1 - z0) / dt
    vx, vy = g.dx(mid), g.dy(mid)
    F_ref = np.zeros((6, 6, 6))
    G_ref = np.zeros((6, 6, 6))
    for j in range(6):
        for k in range(6):
            for l in range(6):
                F_ref[j, k, l] = alpha * (vx[j, l].real * rate[k, l].real + vx[j, l].imag * rate[k, l].imag
                                          + vx[k, l].real * rate[j, l].real + vx[k, l].imag * rate[j, l].imag)
                G_ref[j, k, l] = alpha * (vy[j, k].real * rate[j, l].real + vy[j, k].imag * rate[j, l].imag
                                          + vy[j, l].real * rate[j, k].real + vy[j, l].imag * rate[j, k].imag)
    F, G = nls2d_fluxes(res.stages, prob, TAB1)
    np.testing.assert_allclose(F, F_ref, atol=1e-13)
    np.testing.assert_allclose(G, G_ref, atol=1e-13)


def test_residual_sums_to_global_energy_change(repulsive):
    prob, state = repulsive
    new, res = Nls2dIntegrator(prob, "et2").advance(state)
    R, _ = nls2d_ecl_residual(res.stages, prob, TAB1)
    dE = (nls2d_energy(new, prob)[1] - nls2d_energy(state, prob)[1]) / prob.dt
    assert abs(prob.grid.cell_area * R.sum() - dE) <= 1e-12


def test_linear_problem_et2_equals_st2():
    g = build_grid_2d(-6.0, 12.0, 16, -6.0, 12.0, 16)
    X, Y = g.mesh
    prob = Nls2dProblem(0.5, (-0.5 * (X ** 2 + Y ** 2),), g, dt=0.05)
    assert prob.is_linear
    state = Nls2dState.from_complex(np.exp(-(X - 1) ** 2 - Y ** 2) * np.exp(0.5j * X), g)
    a, _ = Nls2dIntegrator(prob, "et2").advance(state)
    b, _ = Nls2dIntegrator(prob, "st2").advance(state)
    np.testing.assert_allclose(a.psi, b.psi, atol=1e-12)


def test_invariants_record_charge_in_first_slot(attractive):
    prob, state = attractive
    inv = nls2d_invariants(state, prob)
    assert inv.charge_u == nls2d_charge(state) and inv.charge_v is None and inv.momentum is None


def test_et2_short_run_conservation(attractive):
    prob, state = attractive
    ref = nls2d_invariants(state, prob)
    gee = []
    for k in range(1, 21):
        state, rec = et2_step(state, prob, ref)
        gee.append(abs(rec.gee))
    assert max(gee) <= 1e-11
    psi_exact = nls2d_exact_solution("gp-attractive", *prob.grid.mesh, 20 * prob.dt)
    assert np.abs(state.psi - psi_exact).max() <= 1e-2


def test_unknown_scheme_rejected(attractive):
    with pytest.raises(ValueError):
        Nls2dIntegrator(attractive[0], "leapfrog")
