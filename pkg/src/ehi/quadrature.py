"""Adaptive Gauss-Kronrod quadrature on a logarithmic axis.

Integrands met in this package are power laws times slowly varying factors
spread over dozens of decades, so every integral over ``s`` is rewritten as an
integral over ``u = log s``.  Infinite ends of the ``u`` range are mapped onto
the unit interval.  The caller supplies ``log f`` as a function of ``u`` so
that neither ``s`` nor ``f`` has to be representable on its own.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = ["QuadResult", "DivergenceError", "integrate_log"]

# Kronrod 15-point nodes on [-1, 1] with Kronrod and embedded Gauss weights.
_XK = np.array([
    -0.991455371120812639206854697526329,
    -0.949107912342758524526189684047851,
    -0.864864423359769072789712788640926,
    -0.741531185599394439863864773280788,
    -0.586087235467691130294144845693013,
    -0.405845151377397166906606412076961,
    -0.207784955007898467600689403773245,
    0.0,
    0.207784955007898467600689403773245,
    0.405845151377397166906606412076961,
    0.586087235467691130294144845693013,
    0.741531185599394439863864773280788,
    0.864864423359769072789712788640926,
    0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
    0.204432940075298892414161999234649,
    0.190350578064785409913256402421014,
    0.169004726639267902826583426598550,
    0.140653259715525918745189590510238,
    0.104790010322250183839876322541518,
    0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
])
_WG = np.zeros(15)
_WG[1::2] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
    0.381830050505118944950369775488975,
    0.279705391489276667901467771423780,
    0.129484966168869693270611432679082,
]

_IDENTITY, _LOWER_INF, _UPPER_INF = 0, 1, 2
# Width in u of the finite panel next to an infinite end.
_CORE_WIDTH = 4.0
# Largest |u - anchor| visited on an infinite end; the mass beyond is estimated.
U_CLAMP = 1e12
# A clamp remainder above this fraction of the total is treated as divergence.
_REMAINDER_LIMIT = 1e-3
ABS_FLOOR = 1e-300
# multiple of machine epsilon times |u| treated as rounding noise
_ROUNDOFF = 20 * np.finfo(float).eps


class DivergenceError(ArithmeticError):
    """Raised when an integral fails to converge and appears to be infinite."""


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    n_intervals: int
    converged: bool


def _map_nodes(lo, hi, kind, anchor):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    tau = mid[:, None] + half[:, None] * _XK[None, :]
    u = np.array(tau)
    jac = np.ones_like(tau)
    with np.errstate(divide="ignore", over="ignore"):
        _apply_maps(tau, u, jac, kind, anchor)
    return u, jac, half


def _apply_maps(tau, u, jac, kind, anchor):
    # infinite ends: u = anchor -/+ x^2 with x = (1-t)/t resp. t/(1-t); the square
    # keeps polylog tails |u|^-p with p >= 3/2 bounded in t
    low = kind == _LOWER_INF
    if low.any():
        t = tau[low]
        x = (1.0 - t) / t
        u[low] = anchor[low, None] - x * x
        jac[low] = 2.0 * x / (t * t)
    up = kind == _UPPER_INF
    if up.any():
        t = tau[up]
        x = t / (1.0 - t)
        u[up] = anchor[up, None] + x * x
        jac[up] = 2.0 * x / ((1.0 - t) ** 2)


def _panel_sums(log_f, lo, hi, kind, anchor):
    u, jac, half = _map_nodes(lo, hi, kind, anchor)
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        lf = np.asarray(log_f(u), dtype=float)
        vals = np.exp(lf + u) * jac
    vals = np.where(np.isnan(vals), np.inf, vals)
    if not np.all(np.isfinite(vals)):
        bad = ~np.all(np.isfinite(vals), axis=1)
        inf = np.full(lo.size, np.inf)
        kron = np.where(bad, inf, half * (np.where(np.isfinite(vals), vals, 0.0) @ _WK))
        return kron, np.where(bad, inf, 0.0) + np.where(bad, 0.0, _noise_free(np.abs(
            kron - half * (np.where(np.isfinite(vals), vals, 0.0) @ _WG)), kron, u))
    kron = half * (vals @ _WK)
    gauss = half * (vals @ _WG)
    return kron, _noise_free(np.abs(kron - gauss), kron, u)


def _noise_free(err, kron, u):
    # at large |u| the log-integrand carries rounding noise of order eps |u|;
    # Kronrod-Gauss differences below that floor are noise, not truncation
    floor = _ROUNDOFF * np.max(np.abs(u), axis=1) * np.abs(kron)
    return np.where(err <= floor, 0.0, err)


def _clamp_remainder(log_f, anchor: float, sign: float) -> tuple[float, float]:
    """Mass beyond the clamp and its error, from a local power law ``|u|^-p``.

    The exponent is read off the integrand at ``U`` and ``2U``; ``p <= 1``
    (or anything non-finite) means the tail diverges and gives ``inf``.
    """
    u = anchor + sign * np.array([U_CLAMP, 2.0 * U_CLAMP])
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        lg = np.asarray(log_f(u), dtype=float) + u
    if np.any(np.isnan(lg)) or np.any(lg == np.inf):
        return np.inf, np.inf
    if lg[0] == -np.inf:
        return 0.0, 0.0
    p = (lg[0] - lg[1]) / np.log(2.0)
    if not p > 1.0 + 1e-3:
        return np.inf, np.inf
    est = float(U_CLAMP * np.exp(lg[0]) / (p - 1.0))
    # slowly varying factors make the local exponent approximate
    return est, 0.1 * est


def _initial_pieces(ua: float, ub: float, breaks: Sequence[float]):
    lo, hi, kind, anchor = [], [], [], []
    left = ua if np.isfinite(ua) else None
    right = ub if np.isfinite(ub) else None
    # the mapped end panels must not contain a kink, so the core covers all breakpoints
    b_lo = min(breaks, default=np.inf)
    b_hi = max(breaks, default=-np.inf)
    if left is None and right is None:
        left = min(-_CORE_WIDTH, b_lo - 1.0)
        right = max(_CORE_WIDTH, b_hi + 1.0)
    elif left is None:
        left = min(right - _CORE_WIDTH, b_lo - 1.0)
    elif right is None:
        right = max(left + _CORE_WIDTH, b_hi + 1.0)
    inner = sorted(b for b in breaks if left < b < right)
    edges = [left, *inner, right]
    # unit panels keep each piece close to a single exponential
    for a, b in zip(edges[:-1], edges[1:]):
        n = max(1, int(np.ceil(b - a)))
        pts = np.linspace(a, b, n + 1)
        lo.extend(pts[:-1])
        hi.extend(pts[1:])
        kind.extend([_IDENTITY] * n)
        anchor.extend([0.0] * n)
    # the mapped panels stop exactly at the clamp (x^2 = U_CLAMP) so the
    # integrand has no artificial jump there
    x_max = np.sqrt(U_CLAMP)
    if not np.isfinite(ua):
        lo.append(1.0 / (1.0 + x_max))
        hi.append(1.0)
        kind.append(_LOWER_INF)
        anchor.append(left)
    if not np.isfinite(ub):
        lo.append(0.0)
        hi.append(x_max / (1.0 + x_max))
        kind.append(_UPPER_INF)
        anchor.append(right)
    return (np.array(lo, float), np.array(hi, float),
            np.array(kind, int), np.array(anchor, float))


def integrate_log(
    log_f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    *,
    rtol: float = 1e-10,
    atol: float = ABS_FLOOR,
    breakpoints: Sequence[float] = (),
    max_intervals: int = 4000,
    raise_on_failure: bool = False,
) -> QuadResult:
    """Integrate ``f(s)`` over ``s`` in ``[a, b]`` with ``0 <= a < b <= inf``.

    ``log_f(u)`` must return ``log f(exp(u))`` elementwise (``-inf`` where f
    vanishes).

    ``breakpoints`` are points in ``s`` where the integrand has kinks.  With
    ``raise_on_failure`` a non-converged or non-finite result raises
    :class:`DivergenceError`; otherwise ``converged`` is set to False.
    """
    if not (0.0 <= a < b):
        raise ValueError(f"need 0 <= a < b, got a={a}, b={b}")
    ua = np.log(a) if a > 0 else -np.inf
    ub = np.log(b) if np.isfinite(b) else np.inf
    breaks = [float(np.log(p)) for p in breakpoints if a < p < b]
    lo, hi, kind, anchor = _initial_pieces(ua, ub, breaks)
    val, err = _panel_sums(log_f, lo, hi, kind, anchor)

    converged = False
    while True:
        total = float(val.sum())
        tot_err = float(err.sum())
        if not np.isfinite(total):
            break
        tol = max(atol, rtol * abs(total))
        if tot_err <= tol:
            converged = True
            break
        if lo.size >= max_intervals:
            break
        # refine the fewest worst panels that leave at most tol/2 elsewhere
        order = np.argsort(err)[::-1]
        rest = tot_err - np.cumsum(err[order])
        n_split = int(np.searchsorted(-rest, -0.5 * tol) + 1)
        n_split = min(n_split, order.size, max_intervals - lo.size)
        n_split = max(n_split, 1)
        pick = order[:n_split]
        keep = np.ones(lo.size, bool)
        keep[pick] = False
        mid = 0.5 * (lo[pick] + hi[pick])
        new_lo = np.concatenate([lo[pick], mid])
        new_hi = np.concatenate([mid, hi[pick]])
        new_kind = np.concatenate([kind[pick], kind[pick]])
        new_anchor = np.concatenate([anchor[pick], anchor[pick]])
        nv, ne = _panel_sums(log_f, new_lo, new_hi, new_kind, new_anchor)
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        kind = np.concatenate([kind[keep], new_kind])
        anchor = np.concatenate([anchor[keep], new_anchor])
        val = np.concatenate([val[keep], nv])
        err = np.concatenate([err[keep], ne])

    total, tot_err = float(val.sum()), float(err.sum())
    for kd, sign in ((_LOWER_INF, -1.0), (_UPPER_INF, 1.0)):
        ends = anchor[kind == kd]
        if ends.size:
            rem, rem_err = _clamp_remainder(log_f, float(ends[0]), sign)
            if not rem <= max(atol, _REMAINDER_LIMIT * abs(total)):
                converged = False
            total += rem
            tot_err += rem_err
    result = QuadResult(total, tot_err, int(lo.size), converged)
    if raise_on_failure and not converged:
        raise DivergenceError(
            f"integral did not converge (value={result.value:.6g}, "
            f"error={result.error:.3g}, panels={result.n_intervals})"
        )
    return result
