import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ablab.normality import (
    Metric2,
    best_lift_residual,
    christoffel,
    geodesic_defect_on_axis,
    ham_flow,
    hamiltonian,
    hamiltonian_drift,
    is_normal_interval,
    normal_lift_residual,
    write_phase_csv,
)
from ablab.srmodel import AlphaSpec, DomainError, ModelParams, eval_phi, eval_psi

from oracles import christoffel_fd

ONE = AlphaSpec.constant(1.0)
ZERO = AlphaSpec.constant(0.0)
BUMP = AlphaSpec.bump(0.6, 0.2)

# first-run calibration of the off-axis bend of the normal flow (alpha = 1, a = 1)
LIFT_RESIDUAL_ALPHA1 = 0.0016665886782090949


def M(a=1, b=2, alpha=ONE):
    return Metric2(ModelParams(a, b, alpha))


def test_christoffel_flat():
    for x12 in [(0.0, 0.0), (0.3, -0.7), (-0.4, 0.9)]:
        assert np.all(christoffel(x12, M(a=3, alpha=ZERO)) == 0.0)


def test_christoffel_example():
    G = christoffel((0.0, 0.5), M(a=1))
    fd = christoffel_fd(0.0, 0.5, 1, 1.0)
    assert abs(G[0, 1, 1]) == pytest.approx(0.25, rel=1e-15)
    assert G[0, 1, 1] == pytest.approx(fd[0][1][1], rel=1e-8)
    # positive: the Levi-Civita sign, not the one written in the normality proof
    assert G[0, 1, 1] > 0


def test_christoffel_axis_G222_zero():
    for a in range(5):
        for t in np.linspace(-0.9, 0.9, 7):
            assert christoffel((0.0, t), M(a=a, alpha=BUMP))[1, 1, 1] == 0.0


def test_christoffel_structural_zeros():
    G = christoffel((0.2, 0.4), M(a=2))
    assert G[0, 0, 0] == G[0, 0, 1] == G[0, 1, 0] == G[1, 0, 0] == 0.0
    assert G[1, 0, 1] == G[1, 1, 0]


def test_christoffel_domain():
    with pytest.raises(DomainError):
        christoffel((0.7, 0.0), M())


@pytest.mark.parametrize("a", [0, 1, 2, 5])
def test_christoffel_vs_fd_random(a):
    rng = np.random.default_rng(a)
    for _ in range(100):
        x1, x2 = rng.uniform(-0.49, 0.49), rng.uniform(-0.99, 0.99)
        c = rng.uniform(0, 1)
        G = christoffel((x1, x2), M(a=a, alpha=AlphaSpec.constant(c)))
        ref = np.array(christoffel_fd(x1, x2, a, c))
        err = np.abs(G - ref) / np.maximum(np.abs(ref), 1e-6)
        assert np.max(err) < 1e-5


# --- axis defect ----------------------------------------------------------

def test_defect_examples():
    t = np.linspace(-0.99, 0.99, 101)
    assert np.all(geodesic_defect_on_axis(t, M(alpha=ZERO)) == 0.0)
    np.testing.assert_allclose(geodesic_defect_on_axis(t, M(a=0)), 0.5, rtol=1e-15)
    for a in (1, 2, 5):
        assert geodesic_defect_on_axis(0.0, M(a=a)) == 0.0
    fd = christoffel_fd(0.0, 0.3, 0, 1.0)
    assert geodesic_defect_on_axis(0.3, M(a=0)) == pytest.approx(abs(fd[0][1][1]), rel=1e-8)


def test_is_normal_examples():
    assert is_normal_interval(-0.5, 0.7, M(alpha=ZERO))[0]
    ok, d = is_normal_interval(0.1, 0.2, M(a=1))
    assert not ok and d == pytest.approx(0.1, rel=1e-14)
    assert is_normal_interval(-0.2, 0.2, M(alpha=BUMP)) == (True, 0.0)
    assert not is_normal_interval(0.55, 0.65, M(alpha=BUMP))[0]


@settings(max_examples=150, deadline=None)
@given(st.floats(-0.99, 0.97), st.floats(1e-2, 1.0), st.integers(0, 6))
def test_normality_iff_alpha_vanishes(t1, length, a):
    t2 = min(t1 + length, 0.99)
    if t2 - t1 < 1e-2:
        return
    # the defect near t = 0 can be as small as (1e-2)^6 / 2, below the default tolerance
    tol = 1e-16
    assert is_normal_interval(t1, t2, M(a=a, alpha=ZERO), tol)[0]
    assert not is_normal_interval(t1, t2, M(a=a, alpha=ONE), tol)[0]
    if BUMP.vanishes_on(t1, t2):
        assert is_normal_interval(t1, t2, M(a=a, alpha=BUMP), tol)[0]


def test_default_tolerance_misses_short_intervals_near_zero():
    ok, d = is_normal_interval(0.0, 0.01, M(a=6))
    assert ok and 0 < d < 1e-9


def test_is_normal_interval_bad_input():
    with pytest.raises(ValueError):
        is_normal_interval(0.3, 0.1, M())
    with pytest.raises(ValueError):
        is_normal_interval(-1.0, 0.1, M())


# --- Hamiltonian ----------------------------------------------------------

def test_hamiltonian_examples():
    p = ModelParams(1, 2, ONE)
    for t in (-0.5, 0.0, 0.7):
        assert hamiltonian(((0, t, 0), (0, 1, 3.0)), p) == 0.5
    assert hamiltonian(((0.1, 0.5, 0), (0, 0, 0)), p) == 0.0
    q = ModelParams(1, 2, ZERO)
    x = (0.1, 0.5, 0.0)
    ps = float(eval_psi(x, q))
    want = 0.5 * (1 + (1 + ps) ** 2 / float(eval_phi(x, q)[0]))
    assert hamiltonian((x, (1, 1, 1)), q) == pytest.approx(want, rel=1e-15)
    assert hamiltonian((x, (1, 1, 1)), q) == pytest.approx(0.5 * (1 + 1.0025**2), rel=1e-15)


def test_flow_tracks_gamma_when_flat():
    eps = 0.3
    p = ModelParams(1, 2, ZERO)
    t, z = ham_flow(((0.0, -eps, 0.0), (0.0, 1.0, 0.7)), 2 * eps, 1e-4, p)
    ref = np.column_stack([np.zeros_like(t), -eps + t, np.zeros_like(t)])
    assert np.max(np.abs(z[:, :3] - ref)) < 1e-8
    np.testing.assert_allclose(z[:, 3:], [[0.0, 1.0, 0.7]] * len(t), atol=1e-12)


def test_flow_zero_covector_stays_put():
    p = ModelParams(2, 2, ONE)
    t, z = ham_flow(((0.1, 0.2, 0.3), (0.0, 0.0, 0.0)), 1.0, 1e-2, p)
    assert np.all(z == z[0])


@pytest.mark.parametrize("b", [0, 2, 10])
def test_flow_conserves_H(b):
    p = ModelParams(3, b, AlphaSpec.bump(0.2, 0.5))
    t, z = ham_flow(((0.1, -0.3, 0.0), (0.2, 0.4, 0.5)), 2.0, 1e-4, p)
    assert hamiltonian_drift(t, z, p) < 1e-8


def test_flow_domain_exit():
    with pytest.raises(DomainError):
        ham_flow(((0.1, -0.3, 0.0), (0.3, 0.8, 0.5)), 2.0, 1e-3, ModelParams(3, 2, ZERO))


def test_lift_residual_examples():
    flat = ModelParams(1, 2, ZERO)
    assert normal_lift_residual(-0.2, 0.2, (0, 1, 0), flat) < 1e-8
    res = normal_lift_residual(0.1, 0.3, (0, 1, 0), ModelParams(1, 2, ONE))
    assert res > 1e-3
    assert res == pytest.approx(LIFT_RESIDUAL_ALPHA1, rel=1e-6)
    assert normal_lift_residual(0.2, 0.2, (0, 1, 0), ModelParams(1, 2, ONE)) == 0.0


@pytest.mark.parametrize("alpha,interval", [(ZERO, (-0.4, 0.4)), (BUMP, (-0.2, 0.2)), (BUMP, (0.75, 0.9))])
def test_normal_criterion_consistent_with_flow(alpha, interval):
    m = M(a=2, alpha=alpha)
    assert is_normal_interval(*interval, m)[0]
    assert best_lift_residual(*interval, m.params)[0] < 1e-6


def test_phase_csv(tmp_path):
    p = ModelParams(1, 2, ZERO)
    t, z = ham_flow(((0.0, 0.0, 0.0), (0.0, 1.0, 0.0)), 0.1, 1e-2, p)
    f = tmp_path / "phase.csv"
    write_phase_csv(t, z, f)
    lines = f.read_text().splitlines()
    assert lines[0] == "t,x1,x2,x3,p1,p2,p3"
    assert len(lines) == len(t) + 1
