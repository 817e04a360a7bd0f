"""Central finite-difference validation of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tol: float
    worst: tuple = ()
    errors: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    # floor keeps entries whose true gradient is ~0 from dividing noise by noise
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f, params, step: float = 1e-5, tol: float = 1e-4,
               max_entries: int | None = None, rng=None, floor: float = 1e-6) -> GradCheckReport:
    """Compare backprop gradients of scalar ``f()`` against central differences.

    ``f`` must rebuild the graph from the current parameter values on each call.
    When ``max_entries`` is given, that many entries are sampled uniformly
    (without replacement) across all parameters; otherwise every entry is checked.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    params = list(params)
    for p in params:
        # perturbations write through a flat view, which needs contiguous storage
        p.data = np.ascontiguousarray(p.data, dtype=np.float64)
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("grad_check: loss is not finite")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    entries = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if max_entries is not None and max_entries < len(entries):
        rng = np.random.default_rng(rng)
        pick = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[k] for k in sorted(pick)]

    errors = []
    worst, worst_err = (), 0.0
    for i, j in entries:
        p = params[i]
        flat = p.data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        up = f().item()
        flat[j] = orig - step
        down = f().item()
        flat[j] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError("grad_check: loss became non-finite under perturbation")
        numeric = (up - down) / (2.0 * step)
        a = analytic[i].reshape(-1)[j]
        err = relative_error(a, numeric, floor)
        errors.append(err)
        if err >= worst_err:
            worst_err, worst = err, (getattr(p, "name", str(i)), j, a, numeric)
    for p in params:
        p.grad = None
    return GradCheckReport(max(errors, default=0.0), len(errors), tol, worst, errors)
