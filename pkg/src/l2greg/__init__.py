"""Joint neural-field reconstruction and camera registration.

Per-pixel warp fields align frames locally; differentiable closed-form
solvers (orthogonal Procrustes, normalized DLT) recover one global
transform per frame and pull the local warps toward it.
"""

from l2greg.autodiff import Tensor, Tape, custom_vjp, apply_op

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "custom_vjp", "apply_op", "__version__"]
