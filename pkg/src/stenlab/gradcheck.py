"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import GradCheckError
from .tensor import no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_param: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4
    n_checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def worst(self):
        return max(self.per_param.items(), key=lambda kv: kv[1]) if self.per_param else (None, 0.0)


def grad_check(f, params, step=1e-5, tol=1e-4, names=None) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f()`` with central differences.

    Relative error per element is ``|a - n| / max(1, |a|)``.  ``params`` is a
    ParameterStore (or any iterable of Parameters); ``names`` limits the check.
    Buffers on a store are restored afterwards so train-mode batch-norm
    updates do not leak out of the check.
    """
    plist = [p for p in params if names is None or p.name in names]
    saved_buffers = copy.deepcopy(getattr(params, "buffers", None))

    for p in plist:
        p.zero_grad()
    f().backward()
    analytic = {}
    for p in plist:
        g = p.grad.copy()
        if not np.all(np.isfinite(g)):
            raise GradCheckError(f"non-finite analytic gradient in parameter {p.name!r}")
        analytic[p.name] = g

    report = GradCheckReport(max_rel_err=0.0, tol=tol)
    with no_grad():
        for p in plist:
            flat = p.data.reshape(-1)
            a = analytic[p.name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(f().data)
                flat[i] = orig - step
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2.0 * step)
                if not np.isfinite(num):
                    raise GradCheckError(f"non-finite numeric gradient in parameter {p.name!r}")
                err = abs(a[i] - num) / max(1.0, abs(a[i]))
                worst = max(worst, err)
            report.per_param[p.name] = worst
            report.max_rel_err = max(report.max_rel_err, worst)
            report.n_checked += flat.size

    if saved_buffers is not None:
        params.buffers.clear()
        params.buffers.update(saved_buffers)
    return report
