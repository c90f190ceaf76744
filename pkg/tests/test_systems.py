import numpy as np
import pytest

from idode.systems import (
    NotAffineError,
    SystemSpec,
    double_pendulum,
    evaluate_affine,
    get_system,
    lorenz,
    lorenz96,
    lotka_volterra,
    system_names,
)

ALL_AFFINE = [lorenz(), lorenz96(4), lorenz96(7), lotka_volterra()]


def test_lorenz_origin_equilibrium():
    sys = lorenz()
    assert np.array_equal(sys.velocity(np.zeros(3), np.array([10.0, 28.0, 8 / 3])), np.zeros(3))


def test_lorenz_param_box():
    assert lorenz().param_box == ((9.0, 11.0), (27.0, 29.0), (2.0, 4.0))


def test_lorenz_affine_at_point():
    sys = lorenz()
    x = np.array([1.0, 2.0, 3.0])
    a = np.array([10.0, 28.0, 8 / 3])
    L, b = evaluate_affine(sys, x)
    # hand-substituted: (10*(2-1), 1*28 + (-1*3-2), 1*2 - (8/3)*3)
    expected = np.array([10.0, 23.0, -6.0])
    assert np.allclose(L @ a + b, expected, atol=1e-12)
    assert np.allclose(sys.velocity(x, a), expected, atol=1e-12)
    assert np.allclose(L, [[1, 0, 0], [0, 1, 0], [0, 0, -3]])
    assert np.allclose(b, [0.0, -5.0, 2.0])


def test_lorenz96_uniform_equilibrium():
    sys = lorenz96(4)
    f0 = 1.0
    v = sys.velocity(np.full(4, f0), np.array([f0]))
    assert np.allclose(v, 0.0, atol=1e-14)


def test_lorenz96_param_box():
    assert lorenz96(4).param_box == ((10.0, 20.0),)


def test_lorenz96_hand_evaluated_point():
    # standard cyclic wrap (indices mod N): component i is
    # (x_{i+1} - x_{i-2}) * x_{i-1} - x_i + F
    sys = lorenz96(4)
    v = sys.velocity(np.array([1.0, 2.0, 3.0, 4.0]), np.array([10.0]))
    expected = [
        (2 - 3) * 4 - 1 + 10,
        (3 - 4) * 1 - 2 + 10,
        (4 - 1) * 2 - 3 + 10,
        (1 - 2) * 3 - 4 + 10,
    ]
    assert np.allclose(v, expected, atol=1e-14)


def test_lorenz96_rejects_small_dim():
    with pytest.raises(ValueError, match="dim"):
        lorenz96(3)


def test_lorenz96_rotation_equivariance():
    sys = lorenz96(6)
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.uniform(-10, 10, size=6)
        f = rng.uniform(10, 20, size=1)
        v = sys.velocity(x, f)
        for shift in range(1, 6):
            rotated = sys.velocity(np.roll(x, shift), f)
            assert np.allclose(rotated, np.roll(v, shift), atol=1e-12)


def test_lvpp_origin_and_interior_fixed_points():
    sys = lotka_volterra()
    a = np.array([1.2, 0.7, 0.9, 1.1])
    assert np.array_equal(sys.velocity(np.zeros(2), a), np.zeros(2))
    alpha, beta, delta, gamma = a
    interior = np.array([gamma / delta, alpha / beta])
    assert np.allclose(sys.velocity(interior, a), 0.0, atol=1e-14)


def test_lvpp_param_box():
    assert lotka_volterra().param_box == ((0.5, 1.5),) * 4


def test_lvpp_linear_decomposition_zero_at_origin():
    L, b = evaluate_affine(lotka_volterra(), np.zeros(2))
    assert np.array_equal(L, np.zeros((2, 4)))
    assert np.array_equal(b, np.zeros(2))


def test_double_pendulum_rest_state():
    sys = double_pendulum()
    assert np.allclose(sys.velocity(np.zeros(4), np.array([1.0, 1.0])), 0.0)


def test_double_pendulum_not_affine():
    sys = double_pendulum()
    assert sys.affine_decomposition is None
    with pytest.raises(NotAffineError):
        evaluate_affine(sys, np.zeros(4))


def test_double_pendulum_right_angle_point():
    sys = double_pendulum()
    v = sys.velocity(np.array([np.pi / 2, np.pi / 2, 0.0, 0.0]), np.array([1.0, 1.0]))
    assert np.allclose(v[:2], 0.0, atol=1e-14)
    assert v[2] == pytest.approx(-0.5 * 3 * 9.81, abs=1e-12)
    assert v[3] == pytest.approx(-0.5 * 9.81, abs=1e-12)


def test_double_pendulum_zero_momenta_angles_static():
    sys = double_pendulum()
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = np.array([rng.uniform(-10, 10), rng.uniform(-10, 10), 0.0, 0.0])
        a = rng.uniform(1.0, 2.0, size=2)
        v = sys.velocity(x, a)
        assert v[0] == 0.0 and v[1] == 0.0


@pytest.mark.parametrize("sys", ALL_AFFINE, ids=lambda s: s.name + str(s.state_dim))
def test_affine_decomposition_matches_velocity(sys):
    # random states in a generous attractor box, params twice the box width
    rng = np.random.default_rng(42)
    n = 10_000
    lo = np.array([b[0] for b in sys.param_box])
    hi = np.array([b[1] for b in sys.param_box])
    mid = (lo + hi) / 2
    half = (hi - lo)  # twice the half-width of the box
    alphas = mid + rng.uniform(-1, 1, size=(n, sys.param_dim)) * half
    states = rng.uniform(-30, 30, size=(n, sys.state_dim))
    L, b = sys.affine_decomposition(states)
    recon = np.einsum("bnm,bm->bn", L, alphas) + b
    direct = sys.velocity(states, alphas)
    assert np.max(np.abs(recon - direct)) <= 1e-10


def test_catalog_names_and_lookup():
    assert system_names() == ["double-pendulum", "lorenz", "lorenz96", "lvpp"]
    assert get_system("lorenz").name == "lorenz"
    assert get_system("lorenz96", dim=5).state_dim == 5
    with pytest.raises(KeyError):
        get_system("rossler")


def test_spec_validation():
    with pytest.raises(ValueError, match="lo < hi"):
        SystemSpec(
            name="bad",
            state_dim=1,
            param_dim=1,
            param_box=((1.0, 1.0),),
            velocity=lambda x, a: x,
        )
