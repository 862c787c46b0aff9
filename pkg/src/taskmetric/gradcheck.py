"""Gradient evaluation and its independent finite-difference oracle.

A *scalar program* is any callable taking a ``SegmentView`` over the flat
parameter leaf and returning a scalar ``Node`` (or plain float, for
constant programs). ``value_and_grad`` runs the program through the
reverse-mode engine; ``finite_diff_grad`` re-evaluates it coordinate by
coordinate with central differences and never touches the adjoint path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from . import autodiff as ad
from .params import GradientVector, NumpyView, ParameterVector, SegmentView

ScalarProgram = Callable[[SegmentView], "ad.Node | float"]

DEFAULT_FD_STEP = 1e-5


def _evaluate(program: ScalarProgram, values: np.ndarray, layout) -> float:
    # graph-free: programs dispatch to plain numpy when handed arrays
    out = program(NumpyView(ParameterVector(values, layout)))
    if isinstance(out, ad.Node):
        out = out.value
    return float(out)


def value_and_grad(program: ScalarProgram, params: ParameterVector):
    """Evaluate the program and its gradient with respect to all parameters."""
    leaf = ad.Node(params.values)
    out = program(SegmentView(leaf, params.layout))
    if not isinstance(out, ad.Node):
        value = float(out)
        if not np.isfinite(value):
            raise ad.NumericalError("program value is not finite")
        return value, GradientVector(np.zeros(len(params)), params.layout)
    value = float(out.value)
    if not np.isfinite(value):
        raise ad.NumericalError("program value is not finite")
    out.backward()
    grad = leaf.grad if leaf.grad is not None else np.zeros(len(params))
    grad = GradientVector(np.asarray(grad, dtype=np.float64).copy(), params.layout)
    if not np.all(np.isfinite(grad.values)):
        bad = int(np.flatnonzero(~np.isfinite(grad.values))[0])
        raise ad.NumericalError(
            f"non-finite gradient in segment {params.layout.segment_of(bad)!r}")
    return value, grad


def finite_diff_grad(program: ScalarProgram, params: ParameterVector,
                     step: float = DEFAULT_FD_STEP) -> GradientVector:
    """Central-difference gradient, one perturbed evaluation pair per coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    base = params.values
    grad = np.empty(len(params))
    work = base.copy()
    for i in range(len(params)):
        work[i] = base[i] + step
        hi = _evaluate(program, work, params.layout)
        work[i] = base[i] - step
        lo = _evaluate(program, work, params.layout)
        work[i] = base[i]
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ad.NumericalError(
                f"non-finite evaluation perturbing segment "
                f"{params.layout.segment_of(i)!r}")
        grad[i] = (hi - lo) / (2.0 * step)
    return GradientVector(grad, params.layout)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_segment: str
    worst_index: int
    per_segment: Dict[str, float]
    passed: bool

    def __str__(self):
        lines = [f"max rel error {self.max_rel_error:.3e} "
                 f"(segment {self.worst_segment!r}, coord {self.worst_index})"]
        for name, err in self.per_segment.items():
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def relative_errors(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / scale


def check_grad(program: ScalarProgram, params: ParameterVector,
               rtol: float = 1e-4, step: float = DEFAULT_FD_STEP,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare the reverse-mode gradient against the finite-difference oracle."""
    if rtol <= 0:
        raise ValueError("rtol must be positive")
    _, grad = value_and_grad(program, params)
    fd = finite_diff_grad(program, params, step=step)
    errs = relative_errors(grad.values, fd.values, floor=floor)
    per_segment = {}
    for name, (off, length, _) in params.layout.segments.items():
        per_segment[name] = float(errs[off:off + length].max()) if length else 0.0
    worst = int(np.argmax(errs)) if len(errs) else 0
    max_err = float(errs[worst]) if len(errs) else 0.0
    return GradCheckReport(
        max_rel_error=max_err,
        worst_segment=params.layout.segment_of(worst) if len(errs) else "",
        worst_index=worst,
        per_segment=per_segment,
        passed=max_err <= rtol,
    )
