"""Central finite-difference verification of analytic gradients.

The loss closure must be deterministic (stochastic layers frozen) and
read the parameter arrays in place, so perturbing a coordinate and
calling it again re-evaluates the model. Large tensors are subsampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    worst: tuple[str, int] | None  # (param name, flat coordinate)

    def __str__(self):
        return f"grad check: max rel err {self.max_rel_err:.3e} over {self.n_checked} coords (worst {self.worst})"


def grad_check(
    loss_fn,
    params: dict,
    grads: dict,
    h: float = 1e-5,
    atol: float = 1e-7,
    max_coords_per_tensor: int = 200,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Coordinates where both sides sit below ``atol`` count as matching:
    a parameter with no effect on the loss (e.g. a bias feeding batch
    norm) yields only float noise from both routes."""
    rng = rng or np.random.default_rng(0)
    max_err = 0.0
    worst = None
    checked = 0
    for name, grad in grads.items():
        p = params[name]
        flat = p.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        size = flat.size
        if size > max_coords_per_tensor:
            coords = rng.choice(size, size=max_coords_per_tensor, replace=False)
        else:
            coords = np.arange(size)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + h
            fp = loss_fn()
            flat[k] = orig - h
            fm = loss_fn()
            flat[k] = orig
            numeric = (fp - fm) / (2.0 * h)
            analytic = gflat[k]
            if abs(numeric) < atol and abs(analytic) < atol:
                err = 0.0
            else:
                err = abs(numeric - analytic) / max(abs(numeric), abs(analytic))
            checked += 1
            if err > max_err:
                max_err = err
                worst = (name, int(k))
    return GradCheckReport(max_rel_err=max_err, n_checked=checked, worst=worst)
