import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from sepcontrol import (
    CausalityViolation,
    ClassL,
    CustomLaw,
    Delayed,
    InvalidArgument,
    SamplePath,
    SeparatedLQG,
    StateFeedback,
    SystemModel,
    VolterraKernel,
    Wiener,
    ZeroLaw,
    apply_resolvent,
    build_grid,
    causality_check,
    loop_kernel,
    run_kalman_filter,
    sample_noise,
    sample_noise_batch,
    simulate_open_loop,
    solve_closed_loop,
    solve_control_riccati,
    solve_filter_riccati,
    uniqueness_check,
    volterra_resolvent,
    zero_noise,
)
from sepcontrol.model import draw_initial_state


def _separated(model, cost, grid):
    return SeparatedLQG(solve_control_riccati(model, cost, grid), solve_filter_riccati(model, grid))


def _random_class_l(grid, m, p, seed=0):
    a, b = np.random.default_rng(seed).normal(size=2)
    return ClassL(VolterraKernel.from_function(
        lambda t, s: np.full((m, p), a * np.exp(-(t - s)) + b * s), grid, strictly_causal=True))


def _resolvent_route(model, law, noise, x0):
    """Closed loop from the open-loop path and the resolvent of the loop kernel."""
    Q, ubar = loop_kernel(model, law, noise.grid)
    x0p, y0p = simulate_open_loop(model, noise, SamplePath(noise.grid, ubar), x0=x0)
    z0 = SamplePath(noise.grid, np.concatenate([x0p.values, y0p.values], axis=-1))
    return apply_resolvent(z0, volterra_resolvent(Q))


# resolvent

def test_zero_kernel_has_zero_resolvent():
    g = build_grid(1.0, 20)
    R = volterra_resolvent(VolterraKernel(g, np.zeros((21, 21, 2, 2))))
    assert not np.any(R.values)


def test_constant_kernel_resolvent_closed_form():
    c = 0.7
    g = build_grid(1.0, 1000)
    Q = VolterraKernel.from_function(lambda t, s: c, g)
    R = volterra_resolvent(Q)
    t = g.nodes
    exact = np.tril(c * np.exp(c * (t[:, None] - t[None, :])))
    assert np.abs(R.values[..., 0, 0] - exact).max() <= 1e-6
    np.testing.assert_array_equal(np.diag(R.values[..., 0, 0]), np.full(1001, c))


def _operator_identity_error(Q):
    R = volterra_resolvent(Q)
    I = np.eye(Q.induced_matrix().shape[0])
    return np.abs((I + R.induced_matrix()) @ (I - Q.induced_matrix()) - I).max()


def test_operator_identity_random_strictly_causal_kernel():
    g = build_grid(1.0, 200)
    rng = np.random.default_rng(5)
    C = rng.normal(size=(3, 2, 2))
    Q = VolterraKernel.from_function(lambda t, s: C[0] + C[1] * t + C[2] * np.sin(3 * s), g, strictly_causal=True)
    assert _operator_identity_error(Q) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1), st.sampled_from(["left", "trapezoid"]))
def test_operator_identity_hypothesis(N, seed, rule):
    g = build_grid(1.0, N)
    V = np.tril(np.random.default_rng(seed).normal(size=(N + 1, N + 1)), -1)
    assert _operator_identity_error(VolterraKernel(g, V, rule)) <= 1e-10


def test_trapezoid_diagonal_is_not_an_exact_inverse():
    # with weight on the diagonal the marched resolvent is a quadrature, not an operator inverse
    g = build_grid(1.0, 50)
    Q = VolterraKernel.from_function(lambda t, s: 0.7, g)
    assert _operator_identity_error(Q) > 1e-8


def test_kernel_rejects_upper_entries():
    g = build_grid(1.0, 3)
    with pytest.raises(InvalidArgument):
        VolterraKernel(g, np.ones((4, 4)))


def test_apply_zero_resolvent_is_identity():
    g = build_grid(1.0, 30)
    z0 = SamplePath(g, np.random.default_rng(0).normal(size=(31, 2)))
    z = apply_resolvent(z0, VolterraKernel(g, np.zeros((31, 31, 2, 2)), "left"))
    np.testing.assert_array_equal(z.values, z0.values)


def test_apply_resolvent_is_linear():
    g = build_grid(1.0, 40)
    rng = np.random.default_rng(1)
    R = VolterraKernel(g, np.tril(rng.normal(size=(41, 41))), "trapezoid")
    a, b = rng.normal(size=(2, 41))
    za, zb = apply_resolvent(SamplePath(g, a), R).values, apply_resolvent(SamplePath(g, b), R).values
    np.testing.assert_array_equal(apply_resolvent(SamplePath(g, 2 * a), R).values, 2 * za)
    np.testing.assert_allclose(apply_resolvent(SamplePath(g, 3 * a - b), R).values, 3 * za - zb, atol=1e-12)


def test_kernel_csv(tmp_path):
    g = build_grid(1.0, 2)
    VolterraKernel.from_function(lambda t, s: [[t, s]], g).to_csv(tmp_path / "k.csv")
    lines = (tmp_path / "k.csv").read_text().splitlines()
    assert lines[0] == "k,j,t,s,v_0_0,v_0_1"
    assert len(lines) == 1 + 6


# closed loop

def test_zero_law_reproduces_open_loop(scalar):
    model, _ = scalar
    noise = sample_noise(Wiener(2), build_grid(1.0, 300), 3)
    loop = solve_closed_loop(model, ZeroLaw(), noise)
    x, y = simulate_open_loop(model, noise)
    np.testing.assert_array_equal(loop.x.values, x.values)
    np.testing.assert_array_equal(loop.y.values, y.values)


def test_state_feedback_noise_free_converges_to_exponential():
    A, B, K = np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]), np.array([[-2.0, -3.0]])
    model = SystemModel(A=A, B1=B, B2=np.zeros((2, 1)), C=[[1.0, 0.0]], D=[[1.0]], x0_mean=[1.0, 0.0])
    exact = expm(A + B @ K) @ np.array([1.0, 0.0])
    errs = []
    for N in (500, 1000, 2000):
        loop = solve_closed_loop(model, StateFeedback(K), zero_noise(build_grid(1.0, N), 1))
        errs.append(np.abs(loop.x.values[-1] - exact).max())
    assert errs[0] < 1e-2
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)


def test_separated_estimate_matches_offline_filter(scalar):
    model, cost = scalar
    g = build_grid(1.0, 400)
    law = _separated(model, cost, g)
    loop = solve_closed_loop(model, law, sample_noise(Wiener(2), g, 8))
    run = run_kalman_filter(model, law.L, loop.y, loop.u)
    np.testing.assert_array_equal(loop.u.values, np.einsum("kij,kj->ki", law.K.K, run.xhat.values))


def test_class_l_matches_direct_sum(scalar):
    model, _ = scalar
    g = build_grid(1.0, 60)
    law = _random_class_l(g, 1, 1)
    loop = solve_closed_loop(model, law, sample_noise(Wiener(2), g, 2))
    dy = np.diff(loop.y.values[:, 0])
    F = law.F.values[..., 0, 0]
    for k in (0, 1, 30, 60):
        assert loop.u.values[k, 0] == pytest.approx(F[k, :k] @ dy[:k], abs=1e-14)


@pytest.mark.parametrize("kind", ["class_l", "separated", "delayed"])
def test_linear_kernel_reproduces_the_law(scalar, kind):
    model, cost = scalar
    g = build_grid(1.0, 200)
    law = {"class_l": _random_class_l(g, 1, 1), "separated": _separated(model, cost, g),
           "delayed": Delayed(_separated(model, cost, g), 0.05)}[kind]
    loop = solve_closed_loop(model, law, sample_noise(Wiener(2), g, 4))
    ubar, M = law.linear_kernel(model, g)
    dy = np.diff(loop.y.values, axis=0)
    u = ubar + np.einsum("kjab,jb->ka", M[:, :-1], dy)
    np.testing.assert_allclose(loop.u.values, u, atol=1e-12)


@pytest.mark.parametrize("kind", ["zero", "class_l", "separated", "delayed"])
def test_resolvent_route_agrees_with_forward_substitution(scalar, kind):
    model, cost = scalar
    g = build_grid(1.0, 200)
    law = {"zero": ZeroLaw(), "class_l": _random_class_l(g, 1, 1), "separated": _separated(model, cost, g),
           "delayed": Delayed(_separated(model, cost, g), 0.05)}[kind]
    noise = sample_noise(Wiener(2), g, 6)
    x0 = draw_initial_state(model, 6)
    loop = solve_closed_loop(model, law, noise, x0)
    z = _resolvent_route(model, law, noise, x0)
    np.testing.assert_allclose(z.values, loop.z.values, atol=1e-12)


def test_error_dynamics_do_not_depend_on_the_law(scalar):
    model, cost = scalar
    g = build_grid(1.0, 300)
    filt = solve_filter_riccati(model, g)
    noise = sample_noise_batch(Wiener(2), g, range(20))
    x0 = draw_initial_state(model, np.arange(20))
    errors = []
    for law in (ZeroLaw(), _random_class_l(g, 1, 1), _separated(model, cost, g),
                Delayed(_separated(model, cost, g), 0.05)):
        loop = solve_closed_loop(model, law, noise, x0)
        errors.append(loop.x.values - run_kalman_filter(model, filt, loop.y, loop.u).xhat.values)
    for e in errors[1:]:
        assert np.abs(e - errors[0]).max() <= 1e-10


def test_delayed_law_ignores_the_first_window(scalar):
    model, cost = scalar
    g = build_grid(1.0, 100)
    inner = StateFeedback(solve_control_riccati(model, cost, g))
    loop = solve_closed_loop(model, Delayed(inner, 0.1), sample_noise(Wiener(2), g, 1))
    assert not np.any(loop.u.values[:10])
    assert np.all(loop.u.values[10:] != 0)


# causality and uniqueness

def _peek(k, view):
    return view.at(min(k + 1, 100))


def test_anticipative_law_raises(scalar):
    model, _ = scalar
    with pytest.raises(CausalityViolation):
        solve_closed_loop(model, CustomLaw(_peek), sample_noise(Wiener(2), build_grid(1.0, 100), 0))


def test_causality_check_flags_anticipation(scalar):
    model, _ = scalar
    report = causality_check(model, CustomLaw(_peek), [0], [0.5], Wiener(2), build_grid(1.0, 100))
    assert not report.passed and "causality" in report.error


def test_causality_check_passes_for_linear_laws(scalar):
    model, cost = scalar
    g = build_grid(1.0, 100)
    for law in (ZeroLaw(), _separated(model, cost, g), Delayed(StateFeedback(solve_control_riccati(model, cost, g)), 0.1)):
        report = causality_check(model, law, [0, 1], [0.3, 0.7], Wiener(2), g)
        assert report.passed
        assert all(d["noise_resampled"] for d in report.details)


def test_picard_zero_law_converges_at_once(scalar):
    model, _ = scalar
    report = uniqueness_check(model, ZeroLaw(), sample_noise(Wiener(2), build_grid(1.0, 50), 0))
    assert report.passed
    assert all(d["iterations_exact"] == 1 for d in report.details)


def test_picard_separated_converges_within_budget(scalar):
    model, cost = scalar
    g = build_grid(1.0, 60)
    report = uniqueness_check(model, _separated(model, cost, g), sample_noise(Wiener(2), g, 0),
                              iterations=g.N + 1, starts=[0, 1, np.zeros((61, 2))])
    assert report.passed
    assert all(d["iterations_exact"] is not None and d["iterations_exact"] <= g.N + 1 for d in report.details)


def test_picard_needs_two_starts(scalar):
    model, _ = scalar
    with pytest.raises(InvalidArgument):
        uniqueness_check(model, ZeroLaw(), sample_noise(Wiener(2), build_grid(1.0, 10), 0), starts=[0])
