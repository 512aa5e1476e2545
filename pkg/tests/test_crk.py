import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import polynomial as P
from scipy.optimize import root

from crkpde import (ConvergenceError, HamiltonianSystem, QuadratureRule, StagePolynomial,
                    build_crk_tableau, crk_step, gauss_legendre_rule, weighted_average)


def quartic_system():
    return HamiltonianSystem(
        hamiltonian=lambda y: 0.25 * y[..., 0] ** 4 + 0.5 * y[..., 1] ** 2,
        gradient=lambda y: np.stack([y[..., 0] ** 3, y[..., 1]], axis=-1),
        dimension=2, nonlinearity_degree=3)


def harmonic_system():
    return HamiltonianSystem(
        hamiltonian=lambda y: 0.5 * (y[..., 0] ** 2 + y[..., 1] ** 2),
        gradient=lambda y: y.copy(), dimension=2, nonlinearity_degree=1)


def tableau(s):
    return build_crk_tableau(gauss_legendre_rule(s))


# --- quadrature -------------------------------------------------------------

def test_gauss_one_point_is_midpoint():
    rule = gauss_legendre_rule(1)
    assert rule.nodes == pytest.approx([0.5], abs=1e-15)
    assert rule.weights == pytest.approx([1.0], abs=1e-15)
    assert rule.order == 2


def test_gauss_two_points():
    rule = gauss_legendre_rule(2)
    r3 = np.sqrt(3) / 6
    np.testing.assert_allclose(rule.nodes, [0.5 - r3, 0.5 + r3], atol=1e-14, rtol=0)
    np.testing.assert_allclose(rule.weights, [0.5, 0.5], atol=1e-14, rtol=0)
    assert rule.order == 4


def test_gauss_three_points():
    rule = gauss_legendre_rule(3)
    r15 = np.sqrt(15) / 10
    np.testing.assert_allclose(rule.nodes, [0.5 - r15, 0.5, 0.5 + r15], atol=1e-14, rtol=0)
    np.testing.assert_allclose(rule.weights, [5 / 18, 4 / 9, 5 / 18], atol=1e-14, rtol=0)


@pytest.mark.parametrize("s", range(1, 11))
def test_gauss_matches_numpy_leggauss(s):
    x, w = np.polynomial.legendre.leggauss(s)
    rule = gauss_legendre_rule(s)
    np.testing.assert_allclose(rule.nodes, 0.5 * (x + 1), atol=1e-14, rtol=0)
    np.testing.assert_allclose(rule.weights, 0.5 * w, atol=1e-14, rtol=0)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.diff(rule.nodes) > 0)
    assert rule.order == 2 * s


@pytest.mark.parametrize("s", [0, 11, -1, 2.0, True])
def test_gauss_rejects_bad_count(s):
    with pytest.raises(ValueError):
        gauss_legendre_rule(s)


@pytest.mark.parametrize("s", range(1, 8))
def test_gauss_exact_up_to_degree(s):
    rule = gauss_legendre_rule(s)
    for k in range(2 * s):
        assert rule.integrate(rule.nodes ** k) == pytest.approx(1.0 / (k + 1), abs=1e-14)


def test_duplicate_nodes_rejected():
    with pytest.raises(ValueError):
        build_crk_tableau(QuadratureRule(nodes=np.array([0.3, 0.3]), weights=np.array([0.5, 0.5]), order=2))


# --- tableau ----------------------------------------------------------------

def test_tableau_midpoint_is_tau():
    tab = tableau(1)
    tau, sig = np.meshgrid(np.linspace(0, 1, 7), np.linspace(0, 1, 5))
    np.testing.assert_allclose(tab.a(tau, sig), tau, atol=1e-15)


def test_tableau_two_stage_closed_form():
    tab = tableau(2)
    tau, sig = np.meshgrid(np.linspace(0, 1, 9), np.linspace(0, 1, 9))
    expected = tau * ((4 - 3 * tau) - 6 * (1 - tau) * sig)
    np.testing.assert_allclose(tab.a(tau, sig), expected, atol=1e-13)


@pytest.mark.parametrize("s", range(1, 7))
def test_tableau_consistency_and_vanishing_at_zero(s):
    tab = tableau(s)
    # int_0^1 A(tau, sigma) dsigma == tau coefficientwise
    expected = np.zeros(s + 1)
    expected[1] = 1.0
    # monomial coefficients grow fast with s, so round-off is measured against their size
    scale = np.abs(tab.a_poly).max()
    np.testing.assert_allclose(tab.c_tau(), expected, atol=1e-14 * scale, rtol=0)
    np.testing.assert_allclose(tab.a(0.0, np.linspace(0, 1, 11)), 0.0, atol=1e-14)


@pytest.mark.parametrize("s", range(1, 6))
def test_tableau_symmetry_identity(s):
    tab = tableau(s)
    assert tab.is_symmetric
    t = np.linspace(0, 1, 13)
    tau, sig = np.meshgrid(t, t)
    lhs = tab.a(1 - tau, sig) + tab.a(tau, 1 - sig)
    np.testing.assert_allclose(lhs, tab.a(np.ones_like(tau), 1 - sig), atol=1e-12)


@pytest.mark.parametrize("s", range(1, 6))
def test_tableau_reproduces_quadrature_at_one(s):
    tab = tableau(s)
    fine = gauss_legendre_rule(10)
    rng = np.random.default_rng(s)
    for _ in range(3):
        g = rng.normal(size=s)
        gs = P.polyval(fine.nodes, g)
        scale = np.abs(tab.a_poly).max() * np.abs(g).sum()
        assert fine.integrate(tab.a(1.0, fine.nodes) * gs) == pytest.approx(fine.integrate(gs), abs=1e-14 * scale)


def test_tableau_order_rule():
    for s in range(1, 6):
        assert tableau(s).order == 2 * s
    # a 3-point rule exact only to degree 3 (order 4) used for s=3 gives 2r - 2s + 2 = 4
    nodes = np.array([0.0, 0.5, 1.0])
    rule = QuadratureRule(nodes=nodes, weights=np.array([1 / 6, 2 / 3, 1 / 6]), order=4)
    assert build_crk_tableau(rule).order == 4


def test_dump_format():
    text = tableau(2).dump()
    lines = text.splitlines()
    assert lines[0] == "s 2" and lines[1] == "order 4"
    nodes = [float(v) for v in lines[2].split()[1:]]
    assert nodes == list(gauss_legendre_rule(2).nodes)
    a_rows = [ln for ln in lines if ln.startswith("a_poly[")]
    assert len(a_rows) == 3
    # 17 significant digits: d.dddddddddddddddde+XX
    mantissa = a_rows[1].split()[1].split("e")[0].lstrip("-")
    assert len(mantissa.replace(".", "")) == 17


# --- weighted averages and stage polynomials ---------------------------------

@pytest.mark.parametrize("s", [1, 2, 3])
def test_weighted_average_of_constant(s):
    tab = tableau(s)
    f = StagePolynomial(np.full(s + 1, 3.25))
    for i in range(s):
        assert weighted_average(f, tab, i) == pytest.approx(3.25, abs=1e-14)


def test_weighted_average_of_tau_gives_nodes():
    tab = tableau(2)
    f = StagePolynomial(np.linspace(0.0, 1.0, 3))
    for i in range(2):
        assert weighted_average(f, tab, i) == pytest.approx(tab.rule.nodes[i], abs=1e-14)


def test_weighted_average_rejects_bad_index():
    with pytest.raises(IndexError):
        weighted_average(StagePolynomial(np.zeros(3)), tableau(2), 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10_000),
       st.floats(-5, 5, allow_nan=False), st.floats(-5, 5, allow_nan=False))
def test_weighted_average_linear(s, seed, a, b):
    tab = tableau(s)
    rng = np.random.default_rng(seed)
    deg = 3 * s
    f = StagePolynomial(rng.normal(size=deg + 1))
    g = StagePolynomial(rng.normal(size=deg + 1))
    combo = StagePolynomial(a * f.values + b * g.values)
    for i in range(s):
        lhs = weighted_average(combo, tab, i)
        rhs = a * weighted_average(f, tab, i) + b * weighted_average(g, tab, i)
        assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)))


def test_weighted_average_exact_for_high_degree():
    # <tau^k>_i against an independent 10-point integration of l_i * tau^k
    tab = tableau(3)
    fine = gauss_legendre_rule(10)
    for k in range(9):
        for i in range(3):
            exact = fine.integrate(tab.lagrange_basis[i](fine.nodes) * fine.nodes ** k) / tab.b_weights[i]
            got = weighted_average(lambda t: t ** k, tab, i, degree=k)
            assert got == pytest.approx(exact, abs=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_stage_polynomial_interpolates(s, seed):
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=s + 1)
    poly = StagePolynomial(P.polyval(np.linspace(0, 1, s + 1), coef))
    t = rng.uniform(0, 1, size=7)
    np.testing.assert_allclose(poly(t), P.polyval(t, coef), atol=1e-11)
    np.testing.assert_allclose(poly.derivative(t), P.polyval(t, P.polyder(coef)), atol=1e-9)


# --- steps ------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_skew_quadratic_form_vanishes(d, seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(d, d))
    J = B - B.T
    a = rng.normal(size=d) * 10 ** rng.uniform(-3, 3)
    assert abs(a @ J @ a) <= 1e-14 * (a @ a) * max(1.0, np.abs(J).max())


def test_structure_matrix_must_be_skew():
    with pytest.raises(ValueError):
        HamiltonianSystem(hamiltonian=lambda y: 0.0, gradient=lambda y: y, structure_matrix=np.eye(2))


def test_gradient_consistent_with_hamiltonian():
    sys_ = quartic_system()
    rng = np.random.default_rng(0)
    for _ in range(5):
        y = rng.normal(size=2)
        eps = 1e-6
        fd = np.array([(sys_.hamiltonian(y + eps * e) - sys_.hamiltonian(y - eps * e)) / (2 * eps)
                       for e in np.eye(2)])
        np.testing.assert_allclose(fd, sys_.gradient(y), rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("h", [0.1, 0.5, 1.5])
def test_midpoint_harmonic_energy(h):
    sys_ = harmonic_system()
    y = np.array([1.0, 0.3])
    H0 = sys_.hamiltonian(y)
    for _ in range(20):
        H_prev = sys_.hamiltonian(y)
        y, _, _ = crk_step(sys_, y, h, tableau(1))
        assert abs(sys_.hamiltonian(y) - H_prev) <= 1e-14 * H0


def _dense_two_stage_oracle(y0, h):
    """Collocation equations for the 2-stage method solved by scipy's root finder.

    A(tau, sigma) is written out from its closed form and integrated with numpy's
    own Gauss-Legendre rule, so nothing is shared with the library.
    """
    x, w = np.polynomial.legendre.leggauss(8)
    sig, w = 0.5 * (x + 1), 0.5 * w

    def f(y):
        return np.stack([y[..., 1], -y[..., 0] ** 3], axis=-1)

    def A(tau, s_):
        return tau * ((4 - 3 * tau) - 6 * (1 - tau) * s_)

    def poly_at(vals, t):
        y_half, y_one = vals
        l0 = 2 * (t - 0.5) * (t - 1)
        l1 = -4 * t * (t - 1)
        l2 = 2 * t * (t - 0.5)
        return l0[:, None] * y0 + l1[:, None] * y_half + l2[:, None] * y_one

    def residual(flat):
        vals = flat.reshape(2, 2)
        fs = f(poly_at(vals, sig))
        out = []
        for k, tau in enumerate((0.5, 1.0)):
            out.append(vals[k] - y0 - h * (w * A(tau, sig)) @ fs)
        return np.concatenate(out)

    sol = root(residual, np.tile(y0, 2), method="lm", tol=1e-15)
    assert np.abs(residual(sol.x)).max() < 1e-14
    return sol.x.reshape(2, 2)[1]


def test_quartic_step_matches_dense_oracle():
    y0 = np.array([1.0, 0.0])
    sys_ = quartic_system()
    y1, stages, it = crk_step(sys_, y0, 0.1, tableau(2), tol=1e-14)
    np.testing.assert_allclose(y1, _dense_two_stage_oracle(y0, 0.1), atol=1e-13)
    assert abs(sys_.hamiltonian(y1) - sys_.hamiltonian(y0)) <= 1e-13
    np.testing.assert_array_equal(stages.initial, y0)
    assert it > 1


@pytest.mark.parametrize("s", [1, 2, 3])
def test_step_symmetry(s):
    sys_ = quartic_system()
    tol = 1e-14
    y0 = np.array([0.7, -0.4])
    y1, _, _ = crk_step(sys_, y0, 0.2, tableau(s), tol=tol)
    back, _, _ = crk_step(sys_, y1, -0.2, tableau(s), tol=tol)
    np.testing.assert_allclose(back, y0, atol=10 * tol)


def test_quartic_energy_long_run_linear_growth():
    sys_ = quartic_system()
    tab = tableau(2)
    y = np.array([1.0, 0.0])
    H0 = sys_.hamiltonian(y)
    drift = []
    for n in range(1, 2001):
        y, _, _ = crk_step(sys_, y, 0.1, tab)
        if n % 500 == 0:
            drift.append(abs(sys_.hamiltonian(y) - H0) / H0)
    assert max(drift) <= 1e-13 * 2000


def _global_error(h, T=2.0, s=2):
    sys_ = quartic_system()
    tab = tableau(s)
    ref = np.array([1.0, 0.0])
    hr = h / 16
    for _ in range(int(round(T / hr))):
        ref, _, _ = crk_step(sys_, ref, hr, build_crk_tableau(gauss_legendre_rule(4)))
    y = np.array([1.0, 0.0])
    for _ in range(int(round(T / h))):
        y, _, _ = crk_step(sys_, y, h, tab)
    return np.abs(y - ref).max()


def test_two_stage_observed_order():
    errs = [_global_error(h) for h in (0.1, 0.05, 0.025)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 3.7


def test_non_convergence_reports_iterate():
    sys_ = quartic_system()
    with pytest.raises(ConvergenceError) as info:
        crk_step(sys_, np.array([1.0, 0.0]), 0.1, tableau(2), tol=1e-14, max_iter=2)
    assert info.value.iterations == 2
    assert info.value.iterate is not None and info.value.residual > 1e-14


def test_non_polynomial_gradient_allowed():
    pend = HamiltonianSystem(hamiltonian=lambda y: 0.5 * y[..., 1] ** 2 - np.cos(y[..., 0]),
                             gradient=lambda y: np.stack([np.sin(y[..., 0]), y[..., 1]], axis=-1),
                             dimension=2, nonlinearity_degree=None)
    assert not pend.polynomial
    y = np.array([1.0, 0.0])
    H0 = pend.hamiltonian(y)
    for _ in range(50):
        y, _, _ = crk_step(pend, y, 0.1, tableau(2))
    assert abs(pend.hamiltonian(y) - H0) < 1e-8
