"""Central-difference verification of reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from ..errors import UsageError
from .params import ParameterStore
from .tensor import Tensor, no_grad, trace_kinks


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


ROUNDING_ULPS = 8  # accumulated rounding in one evaluation of a summed loss, in units of |f| * u


def resolution_floor(value: float, eps: float) -> float:
    """Smallest derivative a central difference can report to 1e-4 relative accuracy.

    Rounding ``f(x +- eps)`` leaves an absolute error up to about ``ROUNDING_ULPS * |f| * u / eps``
    in the difference quotient; true derivatives below 1e4 times that (dead relu units,
    shift-invariant biases) are indistinguishable from zero.
    """
    return max(1e-7, 1e4 * ROUNDING_ULPS * abs(value) * np.finfo(np.float64).eps / eps)


def _scalar(out) -> float:
    if not isinstance(out, Tensor) or out.size != 1:
        shape = out.shape if isinstance(out, Tensor) else type(out).__name__
        raise UsageError(f"grad_check needs a scalar-valued function, got {shape}")
    return float(out.data.reshape(()))


KINK_TOL = 1e-12


def _same_pattern(a: list, b: list) -> bool:
    """True when no relu input changes sign between two traces.

    Sign changes among inputs that stay within ``KINK_TOL`` of zero are round-off
    on a tie (e.g. two clamped edges both at 1.0) and move nothing.
    """
    if len(a) != len(b):
        return False
    for p, q in zip(a, b):
        if p.shape != q.shape:
            return False
        flipped = (p > 0) != (q > 0)
        if np.any(flipped & (np.maximum(np.abs(p), np.abs(q)) > KINK_TOL)):
            return False
    return True


def _evaluate(fn, arg, kinks: bool):
    """Value of ``fn(arg)`` without a graph, plus its relu inputs when ``kinks`` is set."""
    with no_grad(), trace_kinks() as pattern:
        value = _scalar(fn(arg) if arg is not None else fn())
    return value, (pattern if kinks else None)


def grad_check(fn, point, eps: float = 1e-4, skip_kinks: bool = False, stats: dict | None = None) -> float:
    """Max componentwise relative error between backward() and central differences of ``fn`` at ``point``.

    With ``skip_kinks`` a coordinate is left out when moving it by ``+-eps`` flips any relu,
    since the difference quotient then straddles a point where no derivative exists.
    ``stats`` (if given) receives the number of checked and skipped coordinates.
    """
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    with trace_kinks() as pattern:
        out = fn(x)
    floor = resolution_floor(_scalar(out), eps)
    out.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(base)
    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    smooth = np.ones(base.size, dtype=bool)
    for i in range(base.size):
        up = base.copy().reshape(-1)
        dn = base.copy().reshape(-1)
        up[i] += eps
        dn[i] -= eps
        fu, pu = _evaluate(fn, Tensor(up.reshape(base.shape)), skip_kinks)
        fd, pd = _evaluate(fn, Tensor(dn.reshape(base.shape)), skip_kinks)
        flat[i] = (fu - fd) / (2 * eps)
        if skip_kinks:
            smooth[i] = _same_pattern(pu, pattern) and _same_pattern(pd, pattern)
    if stats is not None:
        stats.update(checked=int(smooth.sum()), skipped=int(base.size - smooth.sum()))
    err = relative_error(analytic, numeric, floor).reshape(-1)[smooth]
    return float(err.max()) if err.size else 0.0


def grad_check_store(
    loss_fn, store: ParameterStore, eps: float = 1e-4, per_param: int = 8, seed: int = 0,
    skip_kinks: bool = False, stats: dict | None = None,
) -> float:
    """Like :func:`grad_check` over a parameter store, probing ``per_param`` random entries of each tensor."""
    rng = np.random.default_rng(seed)
    store.zero_grad()
    with trace_kinks() as pattern:
        loss = loss_fn()
    floor = resolution_floor(_scalar(loss), eps)
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in store.items()}
    store.zero_grad()
    worst = 0.0
    checked = skipped = 0
    per_param_counts = {}
    for name, t in store.items():
        before = checked
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_param, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            try:
                flat[i] = orig + eps
                fu, pu = _evaluate(loss_fn, None, skip_kinks)
                flat[i] = orig - eps
                fd, pd = _evaluate(loss_fn, None, skip_kinks)
            finally:
                flat[i] = orig
            if skip_kinks and not (_same_pattern(pu, pattern) and _same_pattern(pd, pattern)):
                skipped += 1
                continue
            checked += 1
            num = (fu - fd) / (2 * eps)
            worst = max(worst, float(relative_error(analytic[name].reshape(-1)[i], num, floor)))
        per_param_counts[name] = checked - before
    store.zero_grad()
    if stats is not None:
        stats.update(checked=checked, skipped=skipped, per_param=per_param_counts)
    return worst
