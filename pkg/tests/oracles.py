"""Independent numerical oracles shared by the test suite.

Everything here is computed without the library's differentiation or
solver machinery so it can serve as a second opinion: central finite
differences, the Rodrigues rotation formula, direct homogeneous-coordinate
transforms, and a sequential transmittance recurrence.
"""

from __future__ import annotations

import numpy as np

from l2greg.autodiff import Tape, Tensor

FD_STEP = 1e-6


def finite_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a-b| / max(|a|,|b|,floor), the FD comparison metric used throughout."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_gradient(build, x0: np.ndarray, h: float = FD_STEP,
                   floor: float = 1e-6) -> float:
    """Compare tape gradient of `build` against central finite differences.

    `build(t)` maps a leaf Tensor to a scalar Tensor. Returns the max
    relative error between the analytic and numerical gradients.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        loss = build(leaf)
        grads = tape.backward(loss)
    analytic = grads[leaf.node_id].numpy()

    def scalar(x):
        return build(Tensor(x)).item()

    numeric = finite_difference(scalar, x0, h=h)
    return max_relative_error(analytic, numeric, floor=floor)


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Rotation matrix from an axis-angle vector, by the textbook formula."""
    w = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-14:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * (kx @ kx)


def apply_homogeneous(matrix: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Direct multiply-and-divide application of a 3x3 transform to 2D points."""
    pts = np.asarray(points, dtype=np.float64)
    lifted = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
    mapped = lifted @ matrix.T
    return mapped[:, :2] / mapped[:, 2:3]


def transmittance_weights(sigmas: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Compositing weights by an explicit sequential recurrence over samples:
    optical depth accumulates one sample at a time and the transmittance is
    its exponential."""
    k = len(sigmas)
    weights = np.zeros(k)
    accumulated = 0.0
    for i in range(k):
        tau = sigmas[i] * deltas[i]
        weights[i] = np.exp(-accumulated) * (1.0 - np.exp(-tau))
        accumulated = accumulated + tau
    return weights
