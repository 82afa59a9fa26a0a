"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    ok: bool
    max_rel_err: float
    worst_input: int = -1
    worst_element: int = -1
    message: str = ""
    checked_elements: int = 0

    def __str__(self) -> str:
        status = "ok" if self.ok else "FAIL"
        loc = ""
        if self.worst_input >= 0:
            loc = f" (input {self.worst_input}, element {self.worst_element})"
        msg = f"; {self.message}" if self.message else ""
        return f"{status}: max rel err {self.max_rel_err:.3e}{loc}{msg}"


def gradient_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_elements_per_input: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f`` against central differences.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8). When
    ``max_elements_per_input`` is set, that many elements per input are sampled
    for the (expensive) numeric side; the analytic pass always covers all.
    """
    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        out = f(*inputs)
        if out.data.size != 1:
            raise ValueError(f"gradient_check: f must return a scalar, got shape {out.shape}")
        if not np.isfinite(out.data).all():
            return GradCheckReport(False, np.inf, message="non-finite forward value at base point")
        tape.backward(out)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]

    max_rel = 0.0
    worst = (-1, -1)
    checked = 0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        n_el = t.data.size
        if max_elements_per_input is not None and n_el > max_elements_per_input:
            gen = rng if rng is not None else np.random.default_rng(0)
            elements = gen.choice(n_el, size=max_elements_per_input, replace=False)
        else:
            elements = range(n_el)
        flat = t.data.reshape(-1)
        for j in elements:
            orig = flat[j]
            flat[j] = orig + h
            fp = f(*inputs).item()
            flat[j] = orig - h
            fm = f(*inputs).item()
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                return GradCheckReport(
                    False, np.inf, i, int(j),
                    message=f"non-finite forward value while perturbing input {i} element {j}",
                )
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[i].reshape(-1)[j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (i, int(j))
    return GradCheckReport(max_rel <= tol, max_rel, worst[0], worst[1], checked_elements=checked)


@dataclass
class SuiteResult:
    name: str
    instances: int
    max_rel_err: float
    ok: bool
    detail: str = ""


@dataclass
class SuiteReport:
    results: list[SuiteResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    def lines(self) -> list[str]:
        out = []
        for r in self.results:
            status = "ok  " if r.ok else "FAIL"
            extra = f"  {r.detail}" if r.detail else ""
            out.append(
                f"{status} {r.name:<28} instances={r.instances:<4} max_rel_err={r.max_rel_err:.3e}{extra}"
            )
        return out
