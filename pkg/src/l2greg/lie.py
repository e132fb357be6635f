"""Lie groups SE(2), SL(3), SE(3): exponential maps, logs, and actions.

Exponentials are built from tape primitives and support arbitrary batch
dimensions, so a network can emit one set of algebra coordinates per pixel
and gradients flow back through the map. Near-zero rotation angles switch
to Taylor expansions (threshold 1e-6, where the closed form and the series
agree to ~1e-12) to avoid 0/0.

Logarithms are plain numpy on the principal branch; they exist for metrics
and roundtrip checks, not for training, and are not differentiable.

sl(3) coordinates use the following ordering of the eight traceless
generators (E_ij is the matrix with a single 1 at row i, column j):

    0: E13            x translation
    1: E23            y translation
    2: E12 - E21      rotation
    3: E11 - E22      anisotropic stretch
    4: E12 + E21      shear
    5: E11 + E22 - 2*E33   scale against the projective row
    6: E31            projective x
    7: E32            projective y
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from l2greg import autodiff as ad
from l2greg.autodiff import Tensor, constant

__all__ = [
    "AlgebraCoords",
    "LieTransform",
    "ALGEBRA_DIM",
    "GROUP_OF",
    "KIND_OF_GROUP",
    "SL3_GENERATORS",
    "exp",
    "log",
    "compose",
    "inverse",
    "act",
    "identity",
    "validate_transform",
]

ALGEBRA_DIM = {"se2": 3, "sl3": 8, "se3": 6}
GROUP_OF = {"se2": "SE2", "sl3": "SL3", "se3": "SE3"}
KIND_OF_GROUP = {v: k for k, v in GROUP_OF.items()}
MATRIX_SIZE = {"SE2": 3, "SL3": 3, "SE3": 4}

_ANGLE_EPS = 1e-6


def _sl3_generators() -> np.ndarray:
    g = np.zeros((8, 3, 3))
    g[0, 0, 2] = 1.0
    g[1, 1, 2] = 1.0
    g[2, 0, 1], g[2, 1, 0] = 1.0, -1.0
    g[3, 0, 0], g[3, 1, 1] = 1.0, -1.0
    g[4, 0, 1], g[4, 1, 0] = 1.0, 1.0
    g[5, 0, 0], g[5, 1, 1], g[5, 2, 2] = 1.0, 1.0, -2.0
    g[6, 2, 0] = 1.0
    g[7, 2, 1] = 1.0
    return g


SL3_GENERATORS = _sl3_generators()
# pseudo-inverse that projects a (vectorised) traceless matrix back onto coords
_SL3_PINV = np.linalg.pinv(SL3_GENERATORS.reshape(8, 9).T)


@dataclass
class AlgebraCoords:
    """Coordinates in se(2), sl(3), or se(3); trailing axis is the algebra dim."""

    kind: str
    coords: Tensor

    def __post_init__(self):
        if self.kind not in ALGEBRA_DIM:
            raise ValueError(f"unknown algebra kind '{self.kind}'")
        self.coords = constant(self.coords)
        dim = ALGEBRA_DIM[self.kind]
        if self.coords.shape[-1:] != (dim,):
            raise ValueError(
                f"{self.kind} coordinates need a trailing axis of {dim}, "
                f"got shape {self.coords.shape}")


@dataclass
class LieTransform:
    """Group element stored as a (batch of) homogeneous matrix."""

    kind: str
    matrix: Tensor

    def __post_init__(self):
        if self.kind not in MATRIX_SIZE:
            raise ValueError(f"unknown group kind '{self.kind}'")
        self.matrix = constant(self.matrix)
        n = MATRIX_SIZE[self.kind]
        if self.matrix.shape[-2:] != (n, n):
            raise ValueError(
                f"{self.kind} needs {n}x{n} matrices, got shape {self.matrix.shape}")

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.matrix.shape[:-2]


def identity(kind_or_group: str, batch_shape: tuple[int, ...] = ()) -> LieTransform:
    group = GROUP_OF.get(kind_or_group, kind_or_group)
    n = MATRIX_SIZE[group]
    eye = np.broadcast_to(np.eye(n), batch_shape + (n, n)).copy()
    return LieTransform(group, Tensor(eye))


# ---------------------------------------------------------------------------
# exponential maps
# ---------------------------------------------------------------------------

def _taylor_sin_over(theta_sq: Tensor) -> Tensor:
    # sin(t)/t = 1 - t^2/6 + t^4/120
    return 1.0 + theta_sq * (-1.0 / 6.0) + theta_sq * theta_sq * (1.0 / 120.0)


def _se2_exp(coords: Tensor) -> Tensor:
    theta = coords[..., 0]
    tx = coords[..., 1]
    ty = coords[..., 2]

    small = np.abs(theta.numpy()) < _ANGLE_EPS
    theta_safe = ad.where(small, np.ones(theta.shape), theta)
    theta_sq = theta * theta

    c = ad.cos(theta)
    s = ad.sin(theta)
    # A = sin(t)/t, B = (1 - cos(t))/t
    a = ad.where(small, _taylor_sin_over(theta_sq), s / theta_safe)
    b_taylor = theta * 0.5 + theta * theta_sq * (-1.0 / 24.0)
    b = ad.where(small, b_taylor, (1.0 - c) / theta_safe)

    vx = a * tx - b * ty
    vy = b * tx + a * ty

    zero = Tensor(np.zeros(theta.shape))
    one = Tensor(np.ones(theta.shape))
    row0 = ad.stack([c, -s, vx], axis=-1)
    row1 = ad.stack([s, c, vy], axis=-1)
    row2 = ad.stack([zero, zero, one], axis=-1)
    return ad.stack([row0, row1, row2], axis=-2)


def _hat3(omega: Tensor) -> Tensor:
    """Skew-symmetric matrices from (..., 3) vectors."""
    wx = omega[..., 0]
    wy = omega[..., 1]
    wz = omega[..., 2]
    zero = Tensor(np.zeros(wx.shape))
    row0 = ad.stack([zero, -wz, wy], axis=-1)
    row1 = ad.stack([wz, zero, -wx], axis=-1)
    row2 = ad.stack([-wy, wx, zero], axis=-1)
    return ad.stack([row0, row1, row2], axis=-2)


def _se3_exp(coords: Tensor) -> Tensor:
    omega = coords[..., 0:3]
    rho = coords[..., 3:6]

    theta_sq = (omega * omega).sum(axis=-1)
    small = theta_sq.numpy() < _ANGLE_EPS ** 2
    theta_sq_safe = ad.where(small, np.ones(theta_sq.shape), theta_sq)
    theta = ad.sqrt(theta_sq_safe)
    s = ad.sin(theta)
    c = ad.cos(theta)

    # Rodrigues coefficients with even-power series below the switch point:
    # A = sin(t)/t, B = (1-cos(t))/t^2, C = (t-sin(t))/t^3
    a = ad.where(small, _taylor_sin_over(theta_sq), s / theta)
    b_taylor = 0.5 + theta_sq * (-1.0 / 24.0) + theta_sq * theta_sq * (1.0 / 720.0)
    b = ad.where(small, b_taylor, (1.0 - c) / theta_sq_safe)
    c_taylor = (1.0 / 6.0) + theta_sq * (-1.0 / 120.0) + theta_sq * theta_sq * (1.0 / 5040.0)
    cc = ad.where(small, c_taylor, (theta - s) / (theta_sq_safe * theta))

    hat = _hat3(omega)
    hat_sq = hat @ hat
    eye = Tensor(np.broadcast_to(np.eye(3), hat.shape).copy())
    rot = eye + a[..., None, None] * hat + b[..., None, None] * hat_sq
    v = eye + b[..., None, None] * hat + cc[..., None, None] * hat_sq
    trans = (v @ rho[..., None])

    top = ad.concat([rot, trans], axis=-1)
    bottom_row = np.zeros(top.shape[:-2] + (1, 4))
    bottom_row[..., 0, 3] = 1.0
    return ad.concat([top, Tensor(bottom_row)], axis=-2)


def _sl3_exp(coords: Tensor) -> Tensor:
    batch = coords.shape[:-1]
    gen = Tensor(SL3_GENERATORS.reshape(8, 9))
    x = (coords.reshape(batch + (1, 8)) @ gen).reshape(batch + (3, 3))

    # scaling and squaring: halve until the norm is at most 0.5, then series
    norm = float(np.max(np.sqrt(np.sum(x.numpy() ** 2, axis=(-2, -1))))) if x.size else 0.0
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5))) if norm > 0.5 else 0)
    scaled = x * (0.5 ** squarings)

    eye = Tensor(np.broadcast_to(np.eye(3), batch + (3, 3)).copy())
    acc = eye
    term = eye
    for k in range(1, 31):
        term = (term @ scaled) * (1.0 / k)
        acc = acc + term
        if float(np.max(np.abs(term.numpy()))) < 1e-16:
            break
    for _ in range(squarings):
        acc = acc @ acc
    return acc


def exp(algebra: AlgebraCoords) -> LieTransform:
    """Exponential map onto the group; differentiable w.r.t. the coordinates."""
    coords = algebra.coords
    if not np.all(np.isfinite(coords.numpy())):
        raise ValueError(f"non-finite {algebra.kind} coordinates in exp")
    if algebra.kind == "se2":
        matrix = _se2_exp(coords)
    elif algebra.kind == "se3":
        matrix = _se3_exp(coords)
    else:
        matrix = _sl3_exp(coords)
    return LieTransform(GROUP_OF[algebra.kind], matrix)


# ---------------------------------------------------------------------------
# logarithms (principal branch, numpy only)
# ---------------------------------------------------------------------------

def _se2_log(matrix: np.ndarray) -> np.ndarray:
    theta = np.arctan2(matrix[1, 0], matrix[0, 0])
    if np.pi - abs(theta) < _ANGLE_EPS:
        raise ValueError("non-principal rotation: angle at or near pi")
    if abs(theta) < _ANGLE_EPS:
        a = 1.0 - theta * theta / 6.0
        b = theta / 2.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta
    det = a * a + b * b
    vinv = np.array([[a, b], [-b, a]]) / det
    t = vinv @ matrix[:2, 2]
    return np.array([theta, t[0], t[1]])


def _so3_log(rot: np.ndarray) -> np.ndarray:
    cos_theta = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if np.pi - theta < _ANGLE_EPS:
        raise ValueError("non-principal rotation: angle at or near pi")
    vee = 0.5 * np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    if theta < _ANGLE_EPS:
        factor = 1.0 + theta * theta / 6.0
    else:
        factor = theta / np.sin(theta)
    return factor * vee


def _se3_log(matrix: np.ndarray) -> np.ndarray:
    omega = _so3_log(matrix[:3, :3])
    theta_sq = float(omega @ omega)
    hat = np.array([
        [0.0, -omega[2], omega[1]],
        [omega[2], 0.0, -omega[0]],
        [-omega[1], omega[0], 0.0],
    ])
    if theta_sq < _ANGLE_EPS ** 2:
        coeff = 1.0 / 12.0 + theta_sq / 720.0
    else:
        theta = np.sqrt(theta_sq)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta_sq
        coeff = (1.0 - a / (2.0 * b)) / theta_sq
    vinv = np.eye(3) - 0.5 * hat + coeff * (hat @ hat)
    rho = vinv @ matrix[:3, 3]
    return np.concatenate([omega, rho])


def _sl3_log(matrix: np.ndarray) -> np.ndarray:
    x = scipy.linalg.logm(matrix)
    if np.max(np.abs(np.imag(x))) > 1e-9:
        raise ValueError("non-principal rotation: matrix log left the real branch")
    x = np.real(x)
    coords = _SL3_PINV @ x.reshape(9)
    residual = SL3_GENERATORS.reshape(8, 9).T @ coords - x.reshape(9)
    if np.max(np.abs(residual)) > 1e-8:
        raise ValueError("matrix log is not in sl(3): input is not near the group")
    return coords


def log(transform: LieTransform) -> AlgebraCoords:
    """Principal-branch logarithm of a single (unbatched) transform."""
    matrix = transform.matrix.numpy()
    if matrix.ndim != 2:
        raise ValueError("log expects a single transform, not a batch")
    if transform.kind == "SE2":
        coords = _se2_log(matrix)
    elif transform.kind == "SE3":
        coords = _se3_log(matrix)
    else:
        coords = _sl3_log(matrix)
    return AlgebraCoords(KIND_OF_GROUP[transform.kind], Tensor(coords))


# ---------------------------------------------------------------------------
# group operations
# ---------------------------------------------------------------------------

def compose(a: LieTransform, b: LieTransform) -> LieTransform:
    if a.kind != b.kind:
        raise ValueError(f"cannot compose {a.kind} with {b.kind}")
    return LieTransform(a.kind, a.matrix @ b.matrix)


def inverse(transform: LieTransform) -> LieTransform:
    """Group inverse; closed form for SE so the bottom row stays exact."""
    if transform.kind == "SL3":
        return LieTransform("SL3", ad.matinv(transform.matrix))
    m = transform.matrix
    d = MATRIX_SIZE[transform.kind] - 1
    rot_t = ad.swapaxes(m[..., :d, :d], -1, -2)
    t = m[..., :d, d:d + 1]
    top = ad.concat([rot_t, -(rot_t @ t)], axis=-1)
    bottom = np.zeros(top.shape[:-2] + (1, d + 1))
    bottom[..., 0, d] = 1.0
    return LieTransform(transform.kind, ad.concat([top, Tensor(bottom)], axis=-2))


def act(transform: LieTransform, points: Tensor) -> Tensor:
    """Apply the transform to points (2D for SE2/SL3, 3D for SE3).

    Points are lifted to homogeneous coordinates; SL3 results are divided
    by the third homogeneous coordinate. Matrix batch dims must broadcast
    against the points' batch dims.
    """
    points = constant(points)
    d = 2 if transform.kind in ("SE2", "SL3") else 3
    if points.shape[-1] != d:
        raise ValueError(f"{transform.kind} acts on {d}D points, got shape {points.shape}")
    ones = Tensor(np.ones(points.shape[:-1] + (1,)))
    lifted = ad.concat([points, ones], axis=-1)
    mapped = (transform.matrix @ lifted[..., None])[..., 0]
    if transform.kind == "SL3":
        w = mapped[..., d:d + 1]
        if float(np.min(np.abs(w.numpy()))) < 1e-12:
            raise ValueError("point at infinity: homogeneous coordinate vanished")
        return mapped[..., :d] / w
    return mapped[..., :d]


# ---------------------------------------------------------------------------
# validity checks (used by tests and assertions, not in the training path)
# ---------------------------------------------------------------------------

def validate_transform(transform: LieTransform, tol: float = 1e-9) -> None:
    """Raise AssertionError if the group-membership invariants fail."""
    m = transform.matrix.numpy()
    n = MATRIX_SIZE[transform.kind]
    flat = m.reshape(-1, n, n)
    if transform.kind == "SL3":
        dets = np.linalg.det(flat)
        assert np.max(np.abs(dets - 1.0)) < tol, "SL3 determinant differs from 1"
        return
    d = n - 1
    rot = flat[:, :d, :d]
    gram = rot @ np.swapaxes(rot, -1, -2)
    ortho_err = np.max(np.linalg.norm(gram - np.eye(d), axis=(-2, -1)))
    assert ortho_err < tol, f"rotation block not orthogonal ({ortho_err:.2e})"
    dets = np.linalg.det(rot)
    assert np.max(np.abs(dets - 1.0)) < tol, "rotation determinant differs from +1"
    bottom = flat[:, d, :]
    expected = np.zeros(n)
    expected[d] = 1.0
    assert np.max(np.abs(bottom - expected)) == 0.0, "bottom row is not [0,...,0,1]"
