"""Radial jump kernels, subordinators and their scale quantities.

A kernel is a non-increasing radial density ``j(r)`` on ``R^d``.  Three scale
quantities summarise it at radius ``r``:

* ``jd2   = r^(d+2) j(r)``
* ``m2    = int_{|x|<r} |x|^2 j(|x|) dx``   (truncated second moment)
* ``tail2 = r^2 lambda(r)`` with ``lambda(r) = int_{|x|>=r} j(|x|) dx``

All radial integrals go through :func:`ehi.quadrature.integrate_log`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator
from scipy.special import gammainc, gammaincc

from .quadrature import DivergenceError, integrate_log

__all__ = [
    "DivergenceError",
    "OutOfRangeError",
    "RadialJumpKernel",
    "SubordinatorSpec",
    "ScaleProfile",
    "DoublingEstimate",
    "LevyKhintchineVerdict",
    "surface_area",
    "ball_volume",
    "jd2_m2_constant",
    "jd2_tail2_constant",
    "power_kernel",
    "log_corrected_kernel",
    "zero_kernel",
    "table_kernel",
    "truncated",
    "scaled",
    "scale_profile",
    "scale_profiles",
    "truncated_moment",
    "tail_lambda",
    "check_doubling",
    "kernel_from_subordinator",
    "laplace_exponent",
    "levy_khintchine_check",
    "subordinator",
]

LogFn = Callable[[np.ndarray], np.ndarray]

# Internal quadrature accuracy; comfortably below the 1e-8 contract.
_PROFILE_RTOL = 1e-11
_NEG_INF = -np.inf


class OutOfRangeError(ValueError, ArithmeticError):
    """A tabulated kernel was evaluated outside the radii it was built for."""


def surface_area(d: int) -> float:
    """Area of the unit sphere in ``R^d``: ``2 pi^(d/2) / Gamma(d/2)``."""
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def ball_volume(d: int) -> float:
    """Volume of the unit ball in ``R^d``."""
    return surface_area(d) / d


def jd2_m2_constant(d: int) -> float:
    """Constant C1 in ``r^(d+2) j(r) <= C1 m2(r)`` (any non-increasing j)."""
    return 4.0 / ((1.0 - 2.0 ** (-d)) * ball_volume(d))


def jd2_tail2_constant(d: int, c_j: float) -> float:
    """Constant C2 in ``r^(d+2) j(r) <= C2 r^2 lambda(r)`` under doubling."""
    if c_j <= 0:
        return math.inf
    return 1.0 / ((2.0 ** d - 1.0) * ball_volume(d) * c_j)


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class RadialJumpKernel:
    """Isotropic jump kernel with density ``j(r)``.

    ``log_density`` maps ``u = log r`` to ``log j(e^u)``; it is the only
    required piece.  ``m2_route``/``tail_route`` optionally replace the radial
    quadratures (subordinated kernels use them to avoid touching the memo
    table outside its range).  ``domain`` restricts where ``density`` may be
    evaluated, and ``support_hint`` marks where ``j`` vanishes identically.
    """

    dim: int
    log_density: LogFn
    name: str = "kernel"
    support_hint: Optional[float] = None
    doubling_constant_hint: Optional[float] = None
    breakpoints: tuple[float, ...] = ()
    m2_route: Optional[Callable[[float], float]] = None
    tail_route: Optional[Callable[[float], float]] = None
    domain: tuple[float, float] = (0.0, math.inf)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dim!r}")

    def log_density_at(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        lo, hi = self.domain
        inside = (r >= lo * (1 - 1e-12)) & (r <= hi * (1 + 1e-12))
        if self.support_hint is not None:
            inside |= r > self.support_hint
        if not np.all(inside):
            raise OutOfRangeError(
                f"{self.name}: density requested outside tabulated range [{lo:.3g}, {hi:.3g}]"
            )
        with np.errstate(divide="ignore"):
            return np.asarray(self.log_density(np.log(r)), dtype=float)

    def density(self, r) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(self.log_density_at(r))

    def __call__(self, r):
        return self.density(r)


def power_kernel(dim: int, alpha: float, scale: float = 1.0) -> RadialJumpKernel:
    """``j(r) = scale * r^(-d-alpha)``; the alpha-stable kernel up to a constant."""
    if not (0.0 < alpha < 2.0):
        raise ValueError(
            f"alpha must lie in (0, 2), got {alpha}; otherwise the Levy-Khintchine condition fails"
        )
    if scale <= 0:
        raise ValueError("scale must be positive")
    ls = math.log(scale)
    expo = dim + alpha
    return RadialJumpKernel(
        dim=dim,
        log_density=lambda u: ls - expo * u,
        name=f"stable(alpha={alpha})",
        doubling_constant_hint=2.0 ** (-expo),
        params={"alpha": alpha, "scale": scale},
    )


def log_corrected_kernel(
    dim: int,
    alpha: float,
    beta: float,
    *,
    cutoff: Optional[float] = None,
    regime: str = "small",
) -> RadialJumpKernel:
    """Power law with a logarithmic correction.

    ``regime="small"``: ``j(r) = r^(-d-alpha) (log 1/r)^beta`` on ``(0, cutoff]``
    (``cutoff < 1``, default ``e^-1``), continued beyond ``cutoff`` as the pure
    power ``r^(-d-alpha)`` matched continuously.

    ``regime="large"``: ``j(r) = r^(-d-alpha) (log r)^beta`` on ``[cutoff, inf)``
    (``cutoff > 1``, default ``e``), continued below ``cutoff`` the same way.

    ``alpha`` may be 2 in the small regime (then ``beta < -1`` is needed) and 0
    in the large regime (then ``beta < -1`` is needed).
    """
    if regime not in ("small", "large"):
        raise ValueError("regime must be 'small' or 'large'")
    if regime == "small":
        cutoff = math.exp(-1.0) if cutoff is None else cutoff
        if not (0 < cutoff < 1):
            raise ValueError("small-regime cutoff must lie in (0, 1)")
        if not (0 < alpha <= 2) or (alpha == 2 and beta >= -1):
            raise ValueError("need 0 < alpha < 2, or alpha = 2 with beta < -1")
        L0 = -math.log(cutoff)
    else:
        cutoff = math.e if cutoff is None else cutoff
        if not cutoff > 1:
            raise ValueError("large-regime cutoff must exceed 1")
        if not (0 <= alpha < 2) or (alpha == 0 and beta >= -1):
            raise ValueError("need 0 < alpha < 2, or alpha = 0 with beta < -1")
        L0 = math.log(cutoff)
    # d/dlog r of log j = -(d + alpha) -/+ beta / L must stay <= 0 on the log piece
    if regime == "small" and dim + alpha + beta / L0 < 0:
        raise ValueError("kernel is not non-increasing near the cutoff; lower the cutoff")
    if regime == "large" and dim + alpha - beta / L0 < 0:
        raise ValueError("kernel is not non-increasing near the cutoff; raise the cutoff")
    u0 = math.log(cutoff)
    expo = dim + alpha
    logL0 = math.log(L0)

    def log_density(u):
        u = np.asarray(u, dtype=float)
        if regime == "small":
            on_log = u <= u0
            L = np.where(on_log, -u, L0)
        else:
            on_log = u >= u0
            L = np.where(on_log, u, L0)
        return -expo * u + beta * np.where(on_log, np.log(np.maximum(L, 1e-300)), logL0)

    return RadialJumpKernel(
        dim=dim,
        log_density=log_density,
        name=f"log_stable(alpha={alpha}, beta={beta}, {regime})",
        breakpoints=(cutoff,),
        params={"alpha": alpha, "beta": beta, "cutoff": cutoff, "regime": regime},
    )


def zero_kernel(dim: int) -> RadialJumpKernel:
    return RadialJumpKernel(
        dim=dim, log_density=lambda u: np.full(np.shape(u), _NEG_INF), name="zero"
    )


def table_kernel(dim: int, radii: Sequence[float], values: Sequence[float]) -> RadialJumpKernel:
    """Kernel interpolated monotonically in log-log space from a table.

    Beyond the last radius ``j`` vanishes.  Below the first radius the kernel
    continues with the power law through the first two points.
    """
    r = np.asarray(radii, dtype=float)
    j = np.asarray(values, dtype=float)
    if r.ndim != 1 or r.size < 2 or r.shape != j.shape:
        raise ValueError("table needs at least two (r, j) rows")
    if np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise ValueError("table radii must be positive and strictly increasing")
    if np.any(j <= 0):
        raise ValueError("table values must be positive (zero tails are implied past the last row)")
    if np.any(np.diff(j) > 0):
        raise ValueError("table values must be non-increasing in r")
    lu, lj = np.log(r), np.log(j)
    interp = PchipInterpolator(lu, lj, extrapolate=False)
    slope = (lj[1] - lj[0]) / (lu[1] - lu[0])
    if dim + 2 + slope <= 0:
        raise ValueError("second moment divergent at 0 (table's initial slope too steep)")

    def log_density(u):
        u = np.asarray(u, dtype=float)
        out = interp(np.clip(u, lu[0], lu[-1]))
        out = np.where(u < lu[0], lj[0] + slope * (u - lu[0]), out)
        return np.where(u > lu[-1], _NEG_INF, out)

    return RadialJumpKernel(
        dim=dim,
        log_density=log_density,
        name="table",
        support_hint=float(r[-1]),
        breakpoints=tuple(float(x) for x in r),
        params={"rows": int(r.size)},
    )


def truncated(kernel: RadialJumpKernel, r0: float) -> RadialJumpKernel:
    """``j(r) 1{r <= r0}``."""
    if r0 <= 0:
        raise ValueError("truncation radius must be positive")
    lr0 = math.log(r0)
    base = kernel.log_density

    def log_density(u):
        u = np.asarray(u, dtype=float)
        return np.where(u <= lr0, base(u), _NEG_INF)

    supp = r0 if kernel.support_hint is None else min(r0, kernel.support_hint)
    return replace(
        kernel,
        log_density=log_density,
        name=f"{kernel.name}|r<={r0:g}",
        support_hint=supp,
        doubling_constant_hint=None,
        breakpoints=tuple(sorted(set(kernel.breakpoints) | {r0})),
        m2_route=None,
        tail_route=None,
        params={**kernel.params, "truncate": r0},
    )


def scaled(kernel: RadialJumpKernel, factor: float) -> RadialJumpKernel:
    """``factor * j``."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    lf = math.log(factor)
    base = kernel.log_density
    m2r, tr = kernel.m2_route, kernel.tail_route
    return replace(
        kernel,
        log_density=lambda u: base(u) + lf,
        name=f"{factor:g}*{kernel.name}",
        m2_route=None if m2r is None else (lambda r: factor * m2r(r)),
        tail_route=None if tr is None else (lambda r: factor * tr(r)),
    )


# ---------------------------------------------------------------------------
# scale quantities


@dataclass(frozen=True)
class ScaleProfile:
    r: float
    jd2: float
    m2: float
    tail2: float

    def as_row(self) -> tuple[float, float, float, float]:
        return (self.r, self.jd2, self.m2, self.tail2)


def _check_radius(r: float) -> float:
    r = float(r)
    if not (r > 0) or not math.isfinite(r):
        raise ValueError(f"radius must be a positive finite number, got {r}")
    return r


def truncated_moment(kernel: RadialJumpKernel, r: float, *, rtol: float = _PROFILE_RTOL) -> float:
    """``m2(r)``; raises DivergenceError("second moment divergent at 0")."""
    r = _check_radius(r)
    if kernel.m2_route is not None:
        return float(kernel.m2_route(r))
    d = kernel.dim
    top = r if kernel.support_hint is None else min(r, kernel.support_hint)
    base = kernel.log_density
    res = integrate_log(lambda u: (d + 1) * u + base(u), 0.0, top, rtol=rtol,
                        breakpoints=kernel.breakpoints)
    if not res.converged:
        raise DivergenceError("second moment divergent at 0")
    return surface_area(d) * res.value


def tail_lambda(kernel: RadialJumpKernel, r: float, *, rtol: float = _PROFILE_RTOL) -> float:
    """``lambda(r)``; raises DivergenceError("tail divergent")."""
    r = _check_radius(r)
    if kernel.tail_route is not None:
        return float(kernel.tail_route(r))
    if kernel.support_hint is not None and r >= kernel.support_hint:
        return 0.0
    d = kernel.dim
    top = math.inf if kernel.support_hint is None else kernel.support_hint
    base = kernel.log_density
    res = integrate_log(lambda u: (d - 1) * u + base(u), r, top, rtol=rtol,
                        breakpoints=kernel.breakpoints)
    if not res.converged:
        raise DivergenceError("tail divergent")
    return surface_area(d) * res.value


def scale_profile(kernel: RadialJumpKernel, r: float) -> ScaleProfile:
    """The triple ``(r^(d+2) j(r), m2(r), r^2 lambda(r))`` at radius ``r``."""
    r = _check_radius(r)
    d = kernel.dim
    with np.errstate(under="ignore", over="ignore"):
        jd2 = float(np.exp((d + 2) * math.log(r) + kernel.log_density_at(r)))
    return ScaleProfile(r=r, jd2=jd2, m2=truncated_moment(kernel, r), tail2=r * r * tail_lambda(kernel, r))


def scale_profiles(kernel: RadialJumpKernel, radii: Sequence[float]) -> list[ScaleProfile]:
    return [scale_profile(kernel, r) for r in radii]


@dataclass(frozen=True)
class DoublingEstimate:
    c_j: float
    fails: bool
    worst_radius: float


def check_doubling(kernel: RadialJumpKernel, r_min: float, r_max: float, n_samples: int) -> DoublingEstimate:
    """Minimum of ``j(2r)/j(r)`` over a log grid, clamped to ``[0, 1]``.

    Points with ``j(r) = 0`` count as ratio 1.  ``fails`` is set when the
    minimum is zero, i.e. the doubling condition is violated on the grid.
    """
    if not (0 < r_min < r_max):
        raise ValueError("need 0 < r_min < r_max")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    r = np.geomspace(r_min, r_max, int(n_samples))
    lj = kernel.log_density_at(r)
    lj2 = kernel.log_density_at(2 * r)
    with np.errstate(invalid="ignore", under="ignore"):
        ratio = np.where(np.isneginf(lj), 1.0, np.exp(lj2 - lj))
    ratio = np.minimum(np.nan_to_num(ratio, nan=1.0), 1.0)
    k = int(np.argmin(ratio))
    c = float(ratio[k])
    return DoublingEstimate(c_j=c, fails=c <= 0.0, worst_radius=float(r[k]))


# ---------------------------------------------------------------------------
# subordinators


@dataclass(frozen=True)
class SubordinatorSpec:
    """Subordinator with drift ``gamma`` and Levy density ``m(t)``.

    ``log_density`` maps ``u = log t`` to ``log m(e^u)``.  ``tail_mass`` gives
    ``mu((s, inf))`` in closed form when known.  ``mixture`` optionally
    records that ``mu`` is a finite sum of scaled copies of one law:
    pairs ``(rate, scale)`` with jumps ``scale * Y``; samplers then use it.
    """

    drift: float
    log_density: LogFn
    name: str = "subordinator"
    tail_mass: Optional[Callable[[float], float]] = None
    breakpoints: tuple[float, ...] = ()
    mixture: Optional[tuple[tuple[float, float], ...]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.drift < 0:
            raise ValueError("drift must be non-negative")

    def density(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", under="ignore"):
            return np.exp(np.asarray(self.log_density(np.log(t)), dtype=float))

    def tail(self, s: float) -> float:
        """``mu((s, inf))``."""
        if self.tail_mass is not None:
            return float(self.tail_mass(s))
        res = integrate_log(self.log_density, s, math.inf, rtol=1e-11, breakpoints=self.breakpoints)
        if not res.converged:
            raise DivergenceError("subordinator tail divergent")
        return res.value

    def small_mass(self, eps: float) -> float:
        """``int_0^eps t m(t) dt``."""
        base = self.log_density
        res = integrate_log(lambda u: u + base(u), 0.0, eps, rtol=1e-11, breakpoints=self.breakpoints)
        if not res.converged:
            raise DivergenceError("subordinator first moment divergent at 0")
        return res.value


def subordinator(log_density: LogFn, *, drift: float = 0.0, **kw) -> SubordinatorSpec:
    return SubordinatorSpec(drift=drift, log_density=log_density, **kw)


def laplace_exponent(sub: SubordinatorSpec, lam: float) -> tuple[float, float]:
    """``(phi(lam), phi'(lam))`` with ``phi(lam) = gamma lam + int (1 - e^(-lam t)) mu(dt)``."""
    lam = float(lam)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    base = sub.log_density

    def log_phi(u):
        t = np.exp(u)
        with np.errstate(divide="ignore"):
            return np.log(-np.expm1(-lam * t)) + base(u)

    def log_dphi(u):
        return u - lam * np.exp(u) + base(u)

    r1 = integrate_log(log_phi, 0.0, math.inf, rtol=1e-12, breakpoints=sub.breakpoints)
    r2 = integrate_log(log_dphi, 0.0, math.inf, rtol=1e-12, breakpoints=sub.breakpoints)
    if not (r1.converged and r2.converged):
        raise DivergenceError("Laplace exponent integral divergent")
    return sub.drift * lam + r1.value, sub.drift + r2.value


def _monotone_hermite(x: np.ndarray, y: np.ndarray, dy: np.ndarray) -> CubicHermiteSpline:
    """Hermite interpolant of non-increasing data, slopes limited (Fritsch-Carlson)."""
    dy = dy.copy()
    sec = np.diff(y) / np.diff(x)
    flat = sec == 0
    dy[:-1][flat] = 0.0
    dy[1:][flat] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(flat, 0.0, dy[:-1] / sec)
        b = np.where(flat, 0.0, dy[1:] / sec)
    norm = np.hypot(a, b)
    big = norm > 3.0
    if big.any():
        t = np.where(big, 3.0 / np.where(big, norm, 1.0), 1.0)
        dy[:-1] = np.where(big, t * a * sec, dy[:-1])
        dy[1:] = np.where(big, t * b * sec, dy[1:])
    return CubicHermiteSpline(x, y, dy, extrapolate=False)


def kernel_from_subordinator(
    sub: SubordinatorSpec,
    d: int,
    *,
    r_range: tuple[float, float] = (1e-13, 1e6),
    points_per_decade: int = 24,
    rtol: float = 1e-9,
) -> RadialJumpKernel:
    """Jump kernel of Brownian motion (generator Laplacian) run by ``sub``.

    ``j(r) = int (4 pi t)^(-d/2) exp(-r^2 / 4t) mu(dt)`` is tabulated eagerly on
    a log grid and interpolated monotonically in log-log space; evaluation
    outside the grid is refused.  Where ``j`` underflows the table ends and
    the kernel is declared zero beyond it.  ``m2`` and ``lambda`` are computed
    exactly from ``mu`` through Gaussian shell probabilities.
    """
    if sub.drift > 0:
        raise ValueError("drift present: SBM has diffusion part, not a pure jump kernel")
    if int(d) != d or d < 1:
        raise ValueError("dimension must be a positive integer")
    base = sub.log_density
    c0 = -0.5 * d * math.log(4 * math.pi)
    half = 0.5 * d

    def mixture(r: float, extra: float) -> float:
        # int t^extra (4 pi t)^(-d/2) exp(-r^2/4t) mu(dt)
        q = r * r / 4.0

        def log_f(u):
            with np.errstate(over="ignore"):
                return c0 + (extra - half) * u - q * np.exp(-u) + base(u)

        res = integrate_log(log_f, 0.0, math.inf, rtol=rtol, breakpoints=sub.breakpoints)
        if not res.converged:
            raise DivergenceError(f"heat-kernel mixture did not converge at r={r:g}")
        return res.value

    lo, hi = r_range
    n = int(round(points_per_decade * math.log10(hi / lo))) + 1
    grid = np.geomspace(lo, hi, n)
    vals, slopes = [], []
    for r in grid:
        v = mixture(float(r), 0.0)
        if v <= 1e-290:
            break
        vals.append(v)
        # d log j / d log r = -(r^2/2) int t^-1 (...) / j
        slopes.append(-0.5 * r * r * mixture(float(r), -1.0) / v)
    if len(vals) < 4:
        raise ValueError("subordinated kernel vanishes on the requested range")
    grid = grid[: len(vals)]
    lj = np.log(np.array(vals))
    # monotone by construction; clean up quadrature noise before interpolating
    lj = np.minimum.accumulate(lj)
    lu = np.log(grid)
    interp = _monotone_hermite(lu, lj, np.minimum(np.array(slopes), 0.0))
    support = float(grid[-1]) if len(vals) < n else None
    u_hi = lu[-1]

    def log_density(u):
        u = np.asarray(u, dtype=float)
        out = interp(np.minimum(u, u_hi))
        return np.where(u > u_hi, _NEG_INF, out)

    def m2_route(r: float) -> float:
        q = r * r / 4.0

        def log_f(u):
            t = np.exp(u)
            with np.errstate(divide="ignore", over="ignore"):
                return math.log(2 * d) + u + np.log(gammainc(half + 1, q / t)) + base(u)

        res = integrate_log(log_f, 0.0, math.inf, rtol=_PROFILE_RTOL, breakpoints=sub.breakpoints)
        if not res.converged:
            raise DivergenceError("second moment divergent at 0")
        return res.value

    def tail_route(r: float) -> float:
        q = r * r / 4.0

        def log_f(u):
            t = np.exp(u)
            with np.errstate(divide="ignore", over="ignore"):
                return np.log(gammaincc(half, q / t)) + base(u)

        res = integrate_log(log_f, 0.0, math.inf, rtol=_PROFILE_RTOL, breakpoints=sub.breakpoints)
        if not res.converged:
            raise DivergenceError("tail divergent")
        return res.value

    return RadialJumpKernel(
        dim=d,
        log_density=log_density,
        name=f"sbm[{sub.name}]",
        support_hint=support,
        m2_route=m2_route,
        tail_route=tail_route,
        domain=(float(grid[0]), float(grid[-1])),
        params={"subordinator": sub.name},
    )


# ---------------------------------------------------------------------------
# Levy-Khintchine


@dataclass(frozen=True)
class LevyKhintchineVerdict:
    valid: bool
    m2_at_1: Optional[float] = None
    tail_at_1: Optional[float] = None
    reason: str = ""


def levy_khintchine_check(obj) -> LevyKhintchineVerdict:
    """Check ``int min(1, |x|^2) j < inf`` (kernel) or ``int min(1, t) mu(dt) < inf``.

    For a subordinator the two returned numbers are ``int_0^1 t mu(dt)`` and
    ``mu((1, inf))``.
    """
    if isinstance(obj, RadialJumpKernel):
        try:
            m2 = truncated_moment(obj, 1.0)
        except DivergenceError:
            return LevyKhintchineVerdict(False, reason="second moment divergent at 0")
        try:
            lam = tail_lambda(obj, 1.0)
        except DivergenceError:
            return LevyKhintchineVerdict(False, m2_at_1=m2, reason="tail divergent")
        return LevyKhintchineVerdict(True, m2, lam)
    if isinstance(obj, SubordinatorSpec):
        try:
            small = obj.small_mass(1.0)
        except DivergenceError:
            return LevyKhintchineVerdict(False, reason="first moment divergent at 0")
        try:
            big = obj.tail(1.0)
        except DivergenceError:
            return LevyKhintchineVerdict(False, m2_at_1=small, reason="tail divergent")
        return LevyKhintchineVerdict(True, small, big)
    raise TypeError(f"expected a kernel or subordinator, got {type(obj).__name__}")

