from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Gradients smaller than this are compared in absolute terms: central
# differences carry ~1e-10 roundoff, which swamps any relative measure of an
# exactly-zero gradient (e.g. attention key biases).
ABS_FLOOR = 1e-4


@dataclass
class GradCheckReport:
    max_rel_error: float
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _rel_error(analytic, numeric, floor=ABS_FLOOR):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(module, x, tolerance=1e-4, rng=None, training=False, max_entries=20, check_input=True, abs_floor=ABS_FLOOR):
    """Compare analytic gradients of ``sum(w * module(x))`` against central differences.

    ``w`` is a fixed random projection. Each parameter (and the input) is
    probed at up to ``max_entries`` random coordinates with step
    ``1e-6 * (1 + |theta|)``. Requires float64 parameters and input.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)
    params = module.parameters()
    for p in params:
        if p.value.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
        p.zero_grad()

    out = module.forward(x, training)
    proj = rng.standard_normal(out.shape)
    dx = module.backward(proj)

    def output():
        return np.array(module.forward(x, training), copy=True)

    def probe(arr, analytic_full):
        flat = arr.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
        analytic = analytic_full.reshape(-1)[idx]
        numeric = np.empty(len(idx))
        for j, k in enumerate(idx):
            orig = flat[k]
            h = 1e-6 * (1.0 + abs(orig))
            flat[k] = orig + h
            up = output()
            flat[k] = orig - h
            down = output()
            flat[k] = orig
            # difference outputs before projecting: untouched entries cancel exactly
            numeric[j] = np.sum((up - down) * proj) / (2 * h)
        return _rel_error(analytic, numeric, abs_floor)

    errors = {}
    for p in params:
        errors[p.name] = probe(p.value, p.grad.copy())
    if check_input:
        errors["input"] = probe(x, dx)
    worst = max(errors.values()) if errors else 0.0
    return GradCheckReport(worst, errors, tolerance)
