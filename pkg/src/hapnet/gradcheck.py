"""Central finite-difference gradient checking.

The numeric side evaluates the forward function only, so it is independent of
every backward rule it validates. Checks are meaningful at float64 only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    abs_error: float
    tolerance: float
    atol: float

    @property
    def passed(self) -> bool:
        # The absolute floor covers gradients indistinguishable from zero:
        # central differences cannot certify anything below their own noise
        # (~|loss| * 1e-16 / eps), so agreement within atol counts as a pass.
        return self.rel_error < self.tolerance or self.abs_error < self.atol

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"{status}  {self.name}: rel err {self.rel_error:.3e} "
                f"(tol {self.tolerance:.0e}, abs {self.abs_error:.3e})")


def numeric_gradient(f, arrays, index, eps: float = 1e-5, coords=None) -> np.ndarray:
    """Central-difference d f / d arrays[index], optionally only at `coords`."""
    target = arrays[index]
    grad = np.zeros_like(target)
    points = coords if coords is not None else list(np.ndindex(target.shape))
    for ix in points:
        orig = target[ix]
        target[ix] = orig + eps
        fp = float(f(*arrays))
        target[ix] = orig - eps
        fm = float(f(*arrays))
        target[ix] = orig
        grad[ix] = (fp - fm) / (2.0 * eps)
    return grad


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), 1e-12)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def check_gradients(
    build_loss,
    arrays,
    names=None,
    eps: float = 1e-5,
    tol: float = 1e-4,
    atol: float = 1e-7,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[GradCheckResult]:
    """Compare analytic gradients of a scalar loss against finite differences.

    `build_loss(*tensors) -> Tensor` constructs the graph from leaf Tensors
    created from `arrays`. When `max_coords` is set, large inputs are probed
    at a deterministic random coordinate subset (every array is still probed).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    if names is None:
        names = [f"arg{i}" for i in range(len(arrays))]

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(*leaves)
    loss.backward()

    def f(*arrs):
        vals = [Tensor(a) for a in arrs]
        return build_loss(*vals).data

    results = []
    for i, (leaf, name) in enumerate(zip(leaves, names)):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[i])
        coords = None
        if max_coords is not None and arrays[i].size > max_coords:
            gen = rng if rng is not None else np.random.default_rng(0)
            flat = gen.choice(arrays[i].size, size=max_coords, replace=False)
            coords = [np.unravel_index(k, arrays[i].shape) for k in sorted(flat)]
            analytic_sel = np.zeros_like(analytic)
            for ix in coords:
                analytic_sel[ix] = analytic[ix]
            analytic = analytic_sel
        numeric = numeric_gradient(f, arrays, i, eps=eps, coords=coords)
        results.append(GradCheckResult(name, _rel_error(analytic, numeric), tol))
    return results
