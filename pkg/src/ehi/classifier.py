"""Scale-by-scale evaluation of the Harnack criteria.

Positive evidence at a scale ``r`` (with surrogate constants ``c`` and ``C``):

* ``bigm2``       ``m2 >= c * tail2``
* ``smallm2(e)``  ``m2 <= C * jd2^e * tail2^(1-e)``

If every grid scale fires one of them the verdict is *holds*.  Otherwise the
log-profile of ``jd2`` is fitted (``ratio_scan``) and the negative gap series
is inspected (``negative_check``).  All tests compare ratios, so multiplying
the kernel by a constant changes nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .kernels import (
    RadialJumpKernel,
    ScaleProfile,
    check_doubling,
    scale_profile,
)
from .parallel import map_ordered

__all__ = [
    "ClassifierConfig",
    "Verdict",
    "RatioFit",
    "RatioScan",
    "NegativeEvidence",
    "scale_grid",
    "condition_at_scale",
    "is_degenerate",
    "classify",
    "ratio_scan",
    "negative_check",
    "compute_profiles",
]

SMALL, LARGE = "small_scale", "large_scale"


@dataclass(frozen=True)
class ClassifierConfig:
    direction: str = SMALL
    grid_base: float = 2.0
    n_scales: int = 30
    r_start: float = 1.0
    c_big: float = 0.01
    C_small: float = 100.0
    epsilon_grid: tuple[float, ...] = (1.0, 0.5, 0.25)
    slope_window: int = 5
    # smallest fitted power exponent treated as genuinely polynomial
    min_exponent: float = 0.05
    # smallest total gap rise accepted as divergence
    gap_rise: float = math.log(10.0)

    def __post_init__(self):
        if self.direction not in (SMALL, LARGE):
            raise ValueError(f"direction must be {SMALL!r} or {LARGE!r}")
        if not self.grid_base >= 2:
            raise ValueError("grid_base must be at least 2")
        if self.n_scales < 1:
            raise ValueError("n_scales must be positive")
        if not self.r_start > 0:
            raise ValueError("r_start must be positive")
        if not (self.c_big > 0 and self.C_small > 0):
            raise ValueError("surrogate constants must be positive")
        if not self.epsilon_grid or any(not (0 < e <= 1) for e in self.epsilon_grid):
            raise ValueError("epsilon_grid entries must lie in (0, 1]")
        if self.slope_window < 3:
            raise ValueError("slope_window must be at least 3")

    def as_dict(self) -> dict:
        return {
            "direction": self.direction,
            "grid_base": self.grid_base,
            "n_scales": self.n_scales,
            "r_start": self.r_start,
            "c_big": self.c_big,
            "C_small": self.C_small,
            "epsilon_grid": list(self.epsilon_grid),
            "slope_window": self.slope_window,
            "min_exponent": self.min_exponent,
            "gap_rise": self.gap_rise,
        }


def scale_grid(cfg: ClassifierConfig) -> np.ndarray:
    """``r_n = r_start * M^(-n)`` (small scales) or ``M^(+n)`` (large), ``n = 0..N-1``."""
    sign = -1.0 if cfg.direction == SMALL else 1.0
    n = np.arange(cfg.n_scales, dtype=float)
    return cfg.r_start * cfg.grid_base ** (sign * n)


def _eps_label(eps: float) -> str:
    return f"smallm2({Fraction(eps).limit_denominator(1000)})"


def is_degenerate(p: ScaleProfile) -> bool:
    return p.m2 == 0.0 and p.tail2 == 0.0 and p.jd2 == 0.0


def condition_at_scale(profile: ScaleProfile, cfg: ClassifierConfig) -> frozenset[str]:
    """Ids of the positive conditions satisfied at one scale.

    A degenerate (all-zero) profile satisfies every condition vacuously; use
    :func:`is_degenerate` to tell it apart.
    """
    fired = set()
    m2, tail2, jd2 = profile.m2, profile.tail2, profile.jd2
    if m2 >= cfg.c_big * tail2:
        fired.add("bigm2")
    for eps in cfg.epsilon_grid:
        if m2 == 0.0:
            fired.add(_eps_label(eps))
            continue
        if jd2 <= 0.0 and eps > 0:
            continue
        if tail2 <= 0.0 and eps < 1:
            continue
        # compare in logs; both sides may be tiny
        rhs = math.log(cfg.C_small) + eps * math.log(jd2)
        if eps < 1:
            rhs += (1 - eps) * math.log(tail2)
        if math.log(m2) <= rhs:
            fired.add(_eps_label(eps))
    return frozenset(fired)


def compute_profiles(kernel: RadialJumpKernel, cfg: ClassifierConfig) -> list[ScaleProfile]:
    return map_ordered(lambda r: scale_profile(kernel, float(r)), scale_grid(cfg))


# ---------------------------------------------------------------------------
# ratio scan


@dataclass(frozen=True)
class RatioFit:
    """``log jd2 = c + power * log r + polylog * log L`` on the regime scales.

    ``L = log(1/r)`` at small scales and ``log r`` at large scales.
    """

    power: float
    power_se: float
    polylog: float
    polylog_se: float
    n_points: int


@dataclass(frozen=True)
class RatioScan:
    fired: tuple[str, ...]
    fit: RatioFit
    scales: tuple[float, ...]


def _least_squares(x: np.ndarray, y: np.ndarray):
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    dof = max(x.shape[0] - x.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.pinv(x.T @ x)
    return coef, np.sqrt(np.maximum(np.diag(cov), 0.0))


def ratio_scan(
    kernel: RadialJumpKernel,
    cfg: ClassifierConfig,
    profiles: Optional[Sequence[ScaleProfile]] = None,
) -> RatioScan:
    """Fit the growth of ``r^(d+2) j(r)`` and report the ratio conditions it supports.

    * ``ratio-a``/``ratio-b``: power exponent above ``min_exponent`` by three
      standard errors (polynomial growth of ``jd2`` away from the limit).
    * ``ratio-c``: power exponent at most ``min_exponent``, polylog decay
      exponent above 1 by three standard errors, and ``j(r) r^d`` not
      decaying toward 0.
    * ``ratio-d``: power exponent at most ``min_exponent`` (growth at most
      polylogarithmic).

    Only scales with ``L >= 1`` enter the fit.
    """
    if profiles is None:
        profiles = compute_profiles(kernel, cfg)
    small = cfg.direction == SMALL
    rows = []
    for p in profiles:
        if p.jd2 <= 0:
            continue
        L = -math.log(p.r) if small else math.log(p.r)
        if L >= 1.0:
            rows.append((p.r, L, p.jd2))
    if len(rows) < cfg.slope_window:
        raise ValueError(
            f"ratio scan needs at least {cfg.slope_window} scales with |log r| >= 1, got {len(rows)}"
        )
    r = np.array([row[0] for row in rows])
    L = np.array([row[1] for row in rows])
    y = np.log([row[2] for row in rows])
    x = np.column_stack([np.ones_like(r), np.log(r), np.log(L)])
    coef, se = _least_squares(x, y)
    p, k = float(coef[1]), float(coef[2])
    se_p, se_k = float(se[1]), float(se[2])
    # at small scales jd2 ~ L^(-k); report the decay exponent k as positive
    fit = RatioFit(power=p, power_se=se_p,
                   polylog=-k if small else k, polylog_se=se_k, n_points=len(rows))

    fired = []
    polynomial = p > cfg.min_exponent + 3 * se_p
    at_most_polylog = p <= cfg.min_exponent
    if small:
        if polynomial:
            fired.append("ratio-a")
        # j r^d = jd2 / r^2 has log-slope p - 2 in log r; non-decay toward 0 needs p < 2
        side = p - 2.0 + 3 * se_p < 0
        if at_most_polylog and fit.polylog > 1.0 + 3 * se_k and side:
            fired.append("ratio-c")
    else:
        # polynomial growth at large r already forces j >~ r^(-d-2)
        if polynomial:
            fired.append("ratio-b")
        if at_most_polylog:
            fired.append("ratio-d")
    return RatioScan(fired=tuple(fired), fit=fit, scales=tuple(float(v) for v in r))


# ---------------------------------------------------------------------------
# negative criterion


@dataclass(frozen=True)
class NegativeEvidence:
    fires: bool
    witness_scales: tuple[float, ...]
    gap_series: tuple[float, ...]
    rise: float


def _gap(p: ScaleProfile, d: int) -> float:
    if p.jd2 <= 0 or p.m2 <= 0 or p.tail2 <= 0:
        return math.nan
    return 2.0 * math.log(p.tail2 / p.jd2) - d * math.log(p.m2 / p.tail2)


def negative_check(
    kernel: RadialJumpKernel,
    cfg: ClassifierConfig,
    profiles: Optional[Sequence[ScaleProfile]] = None,
) -> NegativeEvidence:
    """Look for a widening gap ``log[(tail2/jd2)^2 / (m2/tail2)^d]`` toward the limit.

    Fires when, over at least ``slope_window`` consecutive grid scales, the gap
    is positive and strictly increasing, ``m2 >= c_big tail2`` holds, and the
    gap rises by at least ``gap_rise`` in total.
    """
    if profiles is None:
        profiles = compute_profiles(kernel, cfg)
    d = kernel.dim
    gaps = [_gap(p, d) for p in profiles]
    best: tuple[int, int] = (0, 0)
    best_rise = -math.inf
    start = None
    for i, (p, g) in enumerate(zip(profiles, gaps)):
        if not (math.isfinite(g) and g > 0 and p.m2 >= cfg.c_big * p.tail2):
            start = None
            continue
        if start is None or not g > gaps[i - 1] + 1e-9 * max(1.0, abs(g)):
            start = i
        rise = g - gaps[start]
        if i - start + 1 >= cfg.slope_window and rise > best_rise:
            best, best_rise = (start, i + 1), rise
    fires = best_rise >= cfg.gap_rise and best[1] - best[0] >= cfg.slope_window
    witness = tuple(profiles[i].r for i in range(*best)) if fires else ()
    return NegativeEvidence(
        fires=bool(fires),
        witness_scales=witness,
        gap_series=tuple(gaps),
        rise=float(best_rise) if math.isfinite(best_rise) else 0.0,
    )


# ---------------------------------------------------------------------------
# verdict


@dataclass(frozen=True)
class Verdict:
    conclusion: str
    fired: tuple[tuple[float, str], ...]
    profiles: tuple[ScaleProfile, ...]
    notes: tuple[str, ...] = ()
    ratio: Optional[RatioScan] = None
    negative: Optional[NegativeEvidence] = None
    config: dict = field(default_factory=dict)


def classify(kernel: RadialJumpKernel, cfg: ClassifierConfig = ClassifierConfig()) -> Verdict:
    """Classify ``kernel`` on the dyadic grid described by ``cfg``."""
    grid = scale_grid(cfg)
    notes = [
        f"holds means: under surrogates c_big={cfg.c_big:g}, C_small={cfg.C_small:g}, "
        f"eps in {list(cfg.epsilon_grid)}"
    ]
    profiles = compute_profiles(kernel, cfg)
    fired = []
    per_scale = []
    for p in profiles:
        ids = condition_at_scale(p, cfg)
        per_scale.append(ids)
        fired.extend((p.r, c) for c in sorted(ids))

    def verdict(conclusion, ratio=None, negative=None):
        return Verdict(conclusion, tuple(fired), tuple(profiles), tuple(notes), ratio, negative, cfg.as_dict())

    if all(is_degenerate(p) for p in profiles):
        notes.append("degenerate: kernel vanishes on the whole grid")
        return verdict("inconclusive")

    lo, hi = float(grid.min()), float(grid.max())
    try:
        doubling = check_doubling(kernel, lo, hi, max(2, 4 * cfg.n_scales))
    except ValueError as exc:
        notes.append(f"doubling not checkable on the grid span: {exc}")
        doubling = None
    if doubling is not None and doubling.fails:
        notes.append(
            f"positive theorem inapplicable: doubling fails near r={doubling.worst_radius:.6g}"
        )
        return verdict("inconclusive")
    if doubling is not None:
        notes.append(f"doubling constant on grid: c_j >= {doubling.c_j:.6g}")

    if all(ids & ({"bigm2"} | {_eps_label(e) for e in cfg.epsilon_grid}) for ids in per_scale):
        return verdict("holds")

    try:
        ratio = ratio_scan(kernel, cfg, profiles)
        fired.extend((ratio.scales[0], c) for c in ratio.fired)
    except ValueError as exc:
        notes.append(f"ratio scan skipped: {exc}")
        ratio = None
    negative = negative_check(kernel, cfg, profiles)
    if negative.fires:
        fired.extend((r, "negative") for r in negative.witness_scales)

    if ratio is not None and ratio.fired:
        if negative.fires:
            notes.append("positive ratio evidence and negative evidence both present")
            return verdict("inconclusive", ratio, negative)
        notes.append("per-scale surrogates did not fire everywhere; holds via ratio conditions")
        return verdict("holds", ratio, negative)
    if negative.fires:
        return verdict("fails", ratio, negative)
    notes.append("neither positive nor negative evidence is decisive")
    return verdict("inconclusive", ratio, negative)
