"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from stepcast.autodiff.layers import ParameterSet
from stepcast.autodiff.tensor import Tensor

# below this combined magnitude an entry is compared in absolute terms
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    entries_checked: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.worst < tolerance

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e} ({self.entries_checked[name]} entries)"
                 for name, err in self.max_rel_error.items()]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """``|a - n| / max(|a| + |n|, REL_FLOOR)`` elementwise."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), REL_FLOOR)


def grad_check(loss_fn: Callable[[], Tensor], params: ParameterSet, step: float = 1e-5,
               max_entries: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the scalar loss from the current parameter values
    on every call. Tensors with more than ``max_entries`` entries are checked
    on a random sample of that size.
    """
    params.zero_grad()
    loss_fn().backward()
    analytic = {name: g.copy() for name, g in params.grads().items()}
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, p in params.items():
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(len(idx))
        for j, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + step
            f_plus = float(loss_fn().value)
            flat[k] = orig - step
            f_minus = float(loss_fn().value)
            flat[k] = orig
            numeric[j] = (f_plus - f_minus) / (2.0 * step)
        err = relative_error(analytic[name].reshape(-1)[idx], numeric)
        report.max_rel_error[name] = float(err.max()) if err.size else 0.0
        report.entries_checked[name] = int(len(idx))
    params.zero_grad()
    return report
