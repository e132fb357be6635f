"""Exponential maps, logs, and group actions for SE(2), SL(3), SE(3)."""

import numpy as np
import pytest

from l2greg import autodiff as ad
from l2greg import lie
from l2greg.autodiff import Tape, Tensor

from oracles import apply_homogeneous, check_gradient, rodrigues


def coords(kind, values):
    return lie.AlgebraCoords(kind, Tensor(values))


@pytest.mark.parametrize("kind", ["se2", "sl3", "se3"])
def test_exp_of_zero_is_identity(kind):
    dim = lie.ALGEBRA_DIM[kind]
    t = lie.exp(coords(kind, np.zeros(dim)))
    n = t.matrix.shape[-1]
    np.testing.assert_array_equal(t.matrix.numpy(), np.eye(n))


def test_se2_pure_translation():
    t = lie.exp(coords("se2", [0.0, 2.0, -1.0]))
    expected = np.eye(3)
    expected[0, 2] = 2.0
    expected[1, 2] = -1.0
    np.testing.assert_allclose(t.matrix.numpy(), expected, atol=1e-15)


def test_se3_rotation_matches_rodrigues_oracle():
    w = np.array([np.pi / 2, 0.0, 0.0])
    t = lie.exp(coords("se3", np.concatenate([w, np.zeros(3)])))
    np.testing.assert_allclose(t.matrix.numpy()[:3, :3], rodrigues(w), atol=1e-12)
    np.testing.assert_allclose(t.matrix.numpy()[:3, 3], 0.0, atol=1e-15)

    rng = np.random.default_rng(0)
    for _ in range(25):
        w = rng.standard_normal(3)
        t = lie.exp(coords("se3", np.concatenate([w, np.zeros(3)])))
        np.testing.assert_allclose(t.matrix.numpy()[:3, :3], rodrigues(w), atol=1e-12)


@pytest.mark.parametrize("kind", ["se2", "sl3", "se3"])
def test_exp_invariants_over_random_draws(kind):
    rng = np.random.default_rng(42)
    dim = lie.ALGEBRA_DIM[kind]
    draws = rng.standard_normal((10_000, dim))
    norms = np.linalg.norm(draws, axis=1, keepdims=True)
    draws = draws / np.maximum(norms, 1e-12) * rng.uniform(0.0, 2.0, (10_000, 1))
    transform = lie.exp(coords(kind, draws))
    lie.validate_transform(transform, tol=1e-9)


@pytest.mark.parametrize("kind,tol", [("se2", 1e-9), ("se3", 1e-9), ("sl3", 1e-8)])
def test_log_roundtrip(kind, tol):
    rng = np.random.default_rng(7)
    dim = lie.ALGEBRA_DIM[kind]
    scale = 0.5 if kind == "sl3" else 1.0
    worst = 0.0
    for _ in range(1000):
        a = rng.standard_normal(dim)
        a = a / np.linalg.norm(a) * rng.uniform(0, scale)
        recovered = lie.log(lie.exp(coords(kind, a))).coords.numpy()
        worst = max(worst, float(np.max(np.abs(recovered - a))))
    assert worst < tol, f"{kind} roundtrip error {worst}"


def test_log_of_identity_is_zero():
    for kind in ("se2", "sl3", "se3"):
        t = lie.identity(kind)
        np.testing.assert_allclose(lie.log(t).coords.numpy(), 0.0, atol=1e-12)


def test_log_rejects_angle_near_pi():
    a = np.array([np.pi - 1e-9, 0.0, 0.0])
    t = lie.exp(coords("se2", a))
    with pytest.raises(ValueError, match="non-principal"):
        lie.log(t)
    w = np.array([0.0, np.pi - 1e-9, 0.0, 0.0, 0.0, 0.0])
    with pytest.raises(ValueError, match="non-principal"):
        lie.log(lie.exp(coords("se3", w)))


@pytest.mark.parametrize("kind", ["se2", "sl3", "se3"])
def test_exp_of_negated_coords_is_inverse(kind):
    rng = np.random.default_rng(31)
    dim = lie.ALGEBRA_DIM[kind]
    for _ in range(50):
        a = rng.standard_normal(dim)
        a = a / np.linalg.norm(a) * rng.uniform(0, 1.0)
        prod = lie.compose(lie.exp(coords(kind, a)), lie.exp(coords(kind, -a)))
        n = prod.matrix.shape[-1]
        assert np.max(np.abs(prod.matrix.numpy() - np.eye(n))) < 1e-9


@pytest.mark.parametrize("kind", ["se2", "sl3", "se3"])
def test_compose_with_inverse_is_identity(kind):
    rng = np.random.default_rng(3)
    dim = lie.ALGEBRA_DIM[kind]
    for _ in range(50):
        a = rng.standard_normal(dim)
        a = a / np.linalg.norm(a) * rng.uniform(0, 1.0)
        t = lie.exp(coords(kind, a))
        prod = lie.compose(t, lie.inverse(t))
        n = prod.matrix.shape[-1]
        assert np.max(np.abs(prod.matrix.numpy() - np.eye(n))) < 1e-10


def test_compose_kind_mismatch_errors():
    with pytest.raises(ValueError, match="compose"):
        lie.compose(lie.identity("se2"), lie.identity("se3"))


def test_act_se2_translation():
    t = lie.exp(coords("se2", [0.0, 2.0, -1.0]))
    out = lie.act(t, Tensor([[0.0, 0.0]]))
    np.testing.assert_allclose(out.numpy(), [[2.0, -1.0]], atol=1e-15)


def test_act_sl3_matches_homogeneous_oracle():
    rng = np.random.default_rng(5)
    square = Tensor([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    for _ in range(20):
        a = rng.standard_normal(8) * 0.3
        t = lie.exp(coords("sl3", a))
        out = lie.act(t, square)
        expected = apply_homogeneous(t.matrix.numpy(), square.numpy())
        np.testing.assert_allclose(out.numpy(), expected, atol=1e-12)


def test_act_sl3_point_at_infinity_errors():
    m = np.eye(3)
    m[2, 0] = 1.0  # det stays 1; w = x + 1 vanishes on the line x = -1
    t = lie.LieTransform("SL3", Tensor(m))
    with pytest.raises(ValueError, match="point at infinity"):
        lie.act(t, Tensor([[-1.0, 0.5]]))


def test_act_se3_rigid_motion():
    a = np.array([0.3, -0.2, 0.5, 1.0, 2.0, 3.0])
    t = lie.exp(coords("se3", a))
    pts = np.random.default_rng(1).standard_normal((10, 3))
    out = lie.act(t, Tensor(pts))
    m = t.matrix.numpy()
    expected = pts @ m[:3, :3].T + m[:3, 3]
    np.testing.assert_allclose(out.numpy(), expected, atol=1e-12)


def test_exp_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        lie.exp(coords("se2", [np.nan, 0.0, 0.0]))


def test_algebra_dimension_is_checked():
    with pytest.raises(ValueError, match="trailing axis"):
        lie.AlgebraCoords("se3", Tensor(np.zeros(5)))


@pytest.mark.parametrize("kind", ["se2", "sl3", "se3"])
def test_exp_jacobian_matches_finite_differences(kind):
    rng = np.random.default_rng(17)
    dim = lie.ALGEBRA_DIM[kind]
    weights = rng.standard_normal((3, 3) if kind != "se3" else (4, 4))
    worst = 0.0
    for _ in range(100):
        a0 = rng.uniform(-1.0, 1.0, dim)
        if abs(a0[0]) < 1e-5 and kind == "se2":
            a0[0] += 1e-3  # keep away from the series switch for the FD probe

        def loss(t):
            m = lie.exp(lie.AlgebraCoords(kind, t)).matrix
            return ad.sumsq(m * Tensor(weights))

        worst = max(worst, check_gradient(loss, a0))
    assert worst < 1e-5, worst


def test_exp_jacobian_at_zero_coordinates():
    # the Taylor branch must be differentiable exactly at 0
    for kind in ("se2", "se3"):
        dim = lie.ALGEBRA_DIM[kind]

        def loss(t):
            m = lie.exp(lie.AlgebraCoords(kind, t)).matrix
            return ad.sumsq(m)

        err = check_gradient(loss, np.zeros(dim))
        assert err < 1e-5


def test_act_gradients_flow_to_points_and_coords():
    rng = np.random.default_rng(23)
    pts = rng.standard_normal((6, 2))

    def loss_coords(t):
        transform = lie.exp(lie.AlgebraCoords("sl3", t))
        return ad.sumsq(lie.act(transform, Tensor(pts)))

    assert check_gradient(loss_coords, rng.standard_normal(8) * 0.2) < 1e-5

    fixed = lie.exp(coords("se2", [0.4, 0.1, -0.2]))

    def loss_points(t):
        return ad.sumsq(lie.act(fixed, t.reshape((6, 2))))

    assert check_gradient(loss_points, pts.ravel()) < 1e-5


def test_batched_exp_matches_single():
    rng = np.random.default_rng(29)
    for kind in ("se2", "sl3", "se3"):
        dim = lie.ALGEBRA_DIM[kind]
        batch = rng.standard_normal((7, dim)) * 0.5
        batched = lie.exp(coords(kind, batch)).matrix.numpy()
        for i in range(7):
            single = lie.exp(coords(kind, batch[i])).matrix.numpy()
            np.testing.assert_allclose(batched[i], single, atol=1e-14)
