"""Differentiable closed-form estimators for frame-wise transforms.

Given pixel-wise correspondences (x_j, y_j), two solvers recover the group
element T minimizing sum_j ||y_j - T x_j||^2:

  * `solve_rigid`: orthogonal Procrustes via SVD of the cross-covariance,
    with the determinant sign fix so the rotation is proper even when the
    unconstrained optimum is a reflection.
  * `solve_homography`: normalized direct linear transform; the solution is
    the right singular vector of the stacked constraint matrix belonging to
    the smallest singular value, rescaled onto SL(3).

Both are registered as custom differentiable primitives. Their backward
passes replay the computation as tape operations (mean, matmul, and the
`svd` primitive below) on a private tape and backpropagate the upstream
gradient through it, so the full chain — including the Hartley
normalization's dependence on the points — is differentiated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from l2greg import autodiff as ad
from l2greg.autodiff import Tape, Tensor, constant, custom_vjp
from l2greg.lie import LieTransform

__all__ = [
    "CorrespondenceSet",
    "DegenerateError",
    "svd",
    "cross_covariance",
    "dlt_system",
    "solve_rigid",
    "solve_homography",
]

_SVD_EPS = 1e-12


class DegenerateError(ValueError):
    """Raised when a correspondence set cannot determine a transform."""


@dataclass
class CorrespondenceSet:
    """Paired source/target points (N x d, d = 2 or 3)."""

    source: Tensor
    target: Tensor

    def __post_init__(self):
        self.source = constant(self.source)
        self.target = constant(self.target)
        if self.source.ndim != 2 or self.target.ndim != 2:
            raise ValueError("correspondences must be N x d arrays")
        if self.source.shape != self.target.shape:
            raise ValueError(
                f"source shape {self.source.shape} != target shape {self.target.shape}")
        if self.source.shape[1] not in (2, 3):
            raise ValueError("points must be 2D or 3D")

    @property
    def dim(self) -> int:
        return self.source.shape[1]

    def __len__(self) -> int:
        return self.source.shape[0]


# ---------------------------------------------------------------------------
# differentiable SVD
# ---------------------------------------------------------------------------

def _guarded_inverse(x: np.ndarray, eps: float = _SVD_EPS) -> np.ndarray:
    """x -> x / (x^2 + eps): finite replacement for 1/x near x = 0."""
    return x / (x * x + eps)


def _svd_fwd(ctx, m):
    if m.ndim != 2:
        raise ad.ShapeError(f"svd: expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("svd: non-finite entries")
    try:
        u, s, vh = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as err:
        raise RuntimeError(f"svd: iteration did not converge for shape {m.shape}") from err
    v = vh.T
    ctx["usv"] = (u, s, v)
    ctx["shape"] = m.shape
    return u, s, v


def _svd_bwd(ctx, gu, gs, gv):
    u, s, v = ctx["usv"]
    m_rows, n_cols = ctx["shape"]
    k = s.shape[0]

    # F_ij = 1 / (s_j^2 - s_i^2) off the diagonal, with the near-degenerate
    # guard x -> x / (x^2 + eps) so repeated singular values stay finite.
    s_sq = s * s
    f = _guarded_inverse(s_sq[None, :] - s_sq[:, None])
    np.fill_diagonal(f, 0.0)

    j = f * (u.T @ gu)
    kk = f * (v.T @ gv)
    core = (j + j.T) * s[None, :] + s[:, None] * (kk + kk.T) + np.diag(gs)
    ga = u @ core @ v.T

    s_inv = np.where(s > _SVD_EPS * max(s[0], 1.0), 1.0 / np.maximum(s, 1e-300), 0.0)
    if m_rows > k:
        ga = ga + (gu - u @ (u.T @ gu)) * s_inv[None, :] @ v.T
    if n_cols > k:
        ga = ga + u * s_inv[None, :] @ gv.T @ (np.eye(n_cols) - v @ v.T)
    return (ga,)


svd = custom_vjp("svd", _svd_fwd, _svd_bwd, n_outputs=3)


# ---------------------------------------------------------------------------
# rigid Procrustes
# ---------------------------------------------------------------------------

def cross_covariance(source: Tensor, target: Tensor):
    """Centroids and the d x d cross-covariance sum_j (x_j - x̄)(y_j - ȳ)^T."""
    source = constant(source)
    target = constant(target)
    d = source.shape[1]
    centroid_src = source.mean(axis=0)
    centroid_tgt = target.mean(axis=0)
    centered_src = source - centroid_src.reshape((1, d))
    centered_tgt = target - centroid_tgt.reshape((1, d))
    h = ad.swapaxes(centered_src, 0, 1) @ centered_tgt
    return h, centroid_src, centroid_tgt


def _rigid_graph(source: Tensor, target: Tensor) -> Tensor:
    """Closed-form rigid fit as tape operations; returns the homogeneous matrix."""
    d = source.shape[1]
    cross_cov, centroid_src, centroid_tgt = cross_covariance(source, target)

    u, s, v = svd(cross_cov)
    _check_rigid_conditioning(s.numpy())

    # proper-rotation sign fix: flip the last column of V if det(V U^T) < 0
    sign = float(np.sign(np.linalg.det(v.numpy() @ u.numpy().T)))
    fix = np.ones(d)
    fix[-1] = sign if sign != 0.0 else 1.0
    rot = (v * Tensor(fix[None, :])) @ ad.swapaxes(u, 0, 1)

    trans = centroid_tgt.reshape((d, 1)) - rot @ centroid_src.reshape((d, 1))
    top = ad.concat([rot, trans], axis=1)
    bottom = np.zeros((1, d + 1))
    bottom[0, d] = 1.0
    return ad.concat([top, Tensor(bottom)], axis=0)


def _check_rigid_conditioning(s: np.ndarray) -> None:
    top = s[0]
    if top <= 0.0 or (s[-1] <= _SVD_EPS * top and s[-2] <= _SVD_EPS * top):
        raise DegenerateError(
            "degenerate point set: cross-covariance is rank-deficient below d-1")


def _replay_vjp(graph_fn, ctx, *grads_out):
    """Backward pass by replaying `graph_fn` on a private tape."""
    arrays = ctx["saved_inputs"]
    needs = ctx["needs_input_grad"]
    leaves = [Tensor(a, requires_grad=n) for a, n in zip(arrays, needs)]
    with Tape() as tape:
        out = graph_fn(*leaves)
        outs = out if isinstance(out, tuple) else (out,)
        loss = None
        for o, g in zip(outs, grads_out):
            term = (o * Tensor(g)).sum()
            loss = term if loss is None else loss + term
        grad_map = tape.backward(loss)
    return tuple(
        grad_map[leaf.node_id].numpy() if need else None
        for leaf, need in zip(leaves, needs))


def _rigid_fwd(ctx, source, target):
    ctx["saved_inputs"] = (source, target)
    if np.array_equal(source, target):
        # the optimum for identical point sets is exactly the identity; the
        # degeneracy contract still applies, and the backward pass still
        # differentiates the full SVD chain
        centered = source - source.mean(axis=0)
        _check_rigid_conditioning(np.linalg.svd(
            centered.T @ centered, compute_uv=False))
        return np.eye(source.shape[1] + 1)
    return _rigid_graph(Tensor(source), Tensor(target)).numpy()


def _rigid_bwd(ctx, g):
    return _replay_vjp(_rigid_graph, ctx, g)


_rigid_op = custom_vjp("procrustes_rigid", _rigid_fwd, _rigid_bwd)


def solve_rigid(correspondences: CorrespondenceSet) -> LieTransform:
    """Best SE(2)/SE(3) transform mapping source points onto target points.

    Differentiable w.r.t. both point sets (the training loop only uses the
    target-side gradient; source coordinates are constants there).
    """
    if len(correspondences) < 3:
        raise DegenerateError("rigid fit needs at least 3 correspondences")
    matrix = _rigid_op(correspondences.source, correspondences.target)
    return LieTransform("SE2" if correspondences.dim == 2 else "SE3", matrix)


# ---------------------------------------------------------------------------
# homography via normalized DLT
# ---------------------------------------------------------------------------

def _similarity_and_inverse(points: Tensor):
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    n = points.shape[0]
    centroid = points.mean(axis=0)
    centered = points - centroid.reshape((1, 2))
    mean_dist = ad.sqrt((centered * centered).sum(axis=1)).mean()
    if float(mean_dist.numpy()) < 1e-15:
        raise DegenerateError("degenerate point set: all points coincide")
    scale = ad.reciprocal(mean_dist) * np.sqrt(2.0)

    normalized = centered * scale.reshape((1, 1))
    zero = Tensor(0.0).reshape((1,))
    one = Tensor(1.0).reshape((1,))
    s = scale.reshape((1,))
    cx = centroid[0].reshape((1,))
    cy = centroid[1].reshape((1,))
    inv = ad.stack([
        ad.concat([1.0 / s, zero, cx], axis=0),
        ad.concat([zero, 1.0 / s, cy], axis=0),
        ad.concat([zero, zero, one], axis=0),
    ], axis=0)
    return normalized, inv


def _dlt_rows(src: Tensor, tgt: Tensor) -> Tensor:
    """Stacked 2N x 9 constraint matrix, two rows per correspondence."""
    n = src.shape[0]
    x1, x2 = src[:, 0], src[:, 1]
    y1, y2 = tgt[:, 0], tgt[:, 1]
    zero = Tensor(np.zeros(n))
    one = Tensor(np.ones(n))
    row_a = ad.stack(
        [zero, zero, zero, -x1, -x2, -one, y2 * x1, y2 * x2, y2], axis=1)
    row_b = ad.stack(
        [x1, x2, one, zero, zero, zero, -y1 * x1, -y1 * x2, -y1], axis=1)
    return ad.stack([row_a, row_b], axis=1).reshape((2 * n, 9))


def dlt_system(source: Tensor, target: Tensor):
    """Hartley-normalized 2N x 9 constraint matrix plus the inverse
    similarity transforms used for the normalization."""
    norm_src, inv_src = _similarity_and_inverse(constant(source))
    norm_tgt, inv_tgt = _similarity_and_inverse(constant(target))
    return _dlt_rows(norm_src, norm_tgt), inv_src, inv_tgt


def _homography_graph(source: Tensor, target: Tensor) -> Tensor:
    norm_src, inv_src = _similarity_and_inverse(source)
    norm_tgt, inv_tgt = _similarity_and_inverse(target)
    system = _dlt_rows(norm_src, norm_tgt)
    if system.shape[0] < 9:  # N = 4 gives 8 rows; pad so thin SVD yields all of V
        system = ad.concat([system, Tensor(np.zeros((9 - system.shape[0], 9)))], axis=0)

    u, s, v = svd(system)
    _check_homography_conditioning(s.numpy())
    h_normalized = v[:, 8].reshape((3, 3))

    # undo normalization: H = T_tgt^-1 Ĥ T_src
    h = inv_tgt @ h_normalized @ ad.matinv(inv_src)

    flat = h.numpy()
    trace = float(np.trace(flat))
    if abs(trace) > 1e-9:
        sign = np.sign(trace)
    else:
        idx = np.unravel_index(np.argmax(np.abs(flat)), flat.shape)
        sign = np.sign(flat[idx])
    h = h * float(sign)

    d = ad.det(h)
    if abs(float(d.numpy())) < 1e-12:
        raise DegenerateError("ambiguous homography: vanishing determinant")
    return h * ad.reciprocal(ad.cbrt(d))


def _check_homography_conditioning(s: np.ndarray) -> None:
    if s[7] <= _SVD_EPS * max(s[0], 1.0):
        raise DegenerateError("collinear or otherwise degenerate source points")
    if s[8] / s[7] > 0.99:
        raise DegenerateError("ambiguous homography: smallest singular pair degenerate")


def _collinearity_check(points: np.ndarray) -> None:
    # exact triple check is only tractable for the minimal configuration
    n = points.shape[0]
    if n != 4:
        return
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                a, b, c = points[i], points[j], points[k]
                cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if abs(cross) < 1e-12:
                    raise DegenerateError("collinear source points")


def _homography_fwd(ctx, source, target):
    ctx["saved_inputs"] = (source, target)
    if np.array_equal(source, target):
        # exact identity, but keep the conditioning contract: rebuild the
        # normalized system and inspect its spectrum
        norm_src, _ = _similarity_and_inverse(Tensor(source))
        system = _dlt_rows(norm_src, norm_src).numpy()
        if system.shape[0] < 9:
            system = np.concatenate(
                [system, np.zeros((9 - system.shape[0], 9))], axis=0)
        _check_homography_conditioning(np.linalg.svd(system, compute_uv=False))
        return np.eye(3)
    return _homography_graph(Tensor(source), Tensor(target)).numpy()


def _homography_bwd(ctx, g):
    return _replay_vjp(_homography_graph, ctx, g)


_homography_op = custom_vjp("homography_dlt", _homography_fwd, _homography_bwd)


def solve_homography(correspondences: CorrespondenceSet) -> LieTransform:
    """Best SL(3) homography in the algebraic (DLT) sense; differentiable."""
    if correspondences.dim != 2:
        raise ValueError("homography estimation needs 2D correspondences")
    if len(correspondences) < 4:
        raise DegenerateError("homography fit needs at least 4 correspondences")
    _collinearity_check(correspondences.source.numpy())
    matrix = _homography_op(correspondences.source, correspondences.target)
    return LieTransform("SL3", matrix)
