"""Path simulation through Meyer decompositions.

Every simulable process is reduced to a :class:`JumpModel`: a compound
Poisson stream of explicitly sampled jumps plus an optional Brownian part
(per-coordinate variance rate ``diffusion``) and, for subordinators, a
deterministic drift.

* ``direct_kernel``: jumps of size above the cutoff are exact (small/large
  split); the rest is replaced by Brownian motion with the same second moment.
* ``sbm``: subordinator jumps above the cutoff are exact, each moving the
  Brownian factor by ``N(0, 2 dS)`` per coordinate; the small subordinator
  jumps become drift, i.e. Brownian motion with variance rate ``2 * drift``.
* ``subordinator``: the subordinator itself, small jumps folded into drift.

Batch runners draw replicas in fixed blocks, each from its own counter-based
stream keyed by ``(seed, purpose, block)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .catalog import ProcessSpec, sample_y, y_sf
from .kernels import (
    RadialJumpKernel,
    SubordinatorSpec,
    ball_volume,
    tail_lambda,
    truncated_moment,
)
from .parallel import BLOCK, map_ordered, stream

__all__ = [
    "SimConfig",
    "MeyerSplit",
    "JumpModel",
    "Trajectory",
    "ExitRecord",
    "ExitBatch",
    "TerminalBatch",
    "small_large_split",
    "small_flat_split",
    "build_model",
    "mixture_model",
    "sample_path",
    "exit_event",
    "exit_batch",
    "terminal_batch",
    "quadratic_variation",
    "default_step",
    "random_directions",
]

MODES = ("subordinator", "sbm", "direct_kernel")
SMALL_SURROGATE = "small_surrogate"


@dataclass(frozen=True)
class SimConfig:
    cutoff: float = 0.01
    step: float = 1e-3
    horizon: float = 1.0
    seed: int = 0
    gaussian_surrogate: bool = True

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


def default_step(m2_small: float, radius: float) -> float:
    """Largest step with ``m2_small * h <= (0.01 radius)^2``."""
    if m2_small <= 0:
        return math.inf
    return (0.01 * radius) ** 2 / m2_small


def random_directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """``n`` independent uniform unit vectors in ``R^d``."""
    if d == 1:
        return np.where(rng.random((n, 1)) < 0.5, -1.0, 1.0)
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# log-cell sampler


class _LogCellSampler:
    """Sampler for a density ``g`` on ``(lo, hi)`` given exact cell masses.

    Cells are uniform in ``u = log s``.  A cell is chosen by its exact mass;
    inside it ``s g(s)`` is treated as exponential in ``u`` through the two
    endpoint values.  Mass beyond a finite grid with an infinite upper end
    is drawn from the power law continuing the last cell.
    """

    def __init__(self, edges_u: np.ndarray, log_g_edges: np.ndarray, masses: np.ndarray, far_mass: float):
        self.edges = edges_u
        self.width = np.diff(edges_u)
        lg = np.asarray(log_g_edges, dtype=float)
        with np.errstate(invalid="ignore"):
            slope = (lg[1:] - lg[:-1]) / self.width
        # a vanishing endpoint (support edge) has no exponential shape; use uniform in u
        self.slope = np.where(np.isfinite(slope), slope, 0.0)
        total = float(masses.sum() + far_mass)
        self.total = total
        self.cum = np.concatenate([[0.0], np.cumsum(masses)]) / total
        self.far_slope = float(self.slope[-1]) if far_mass > 0 else 0.0
        if far_mass > 0 and not self.far_slope < 0:
            raise ValueError("sampler tail does not decay")

    def sample_log(self, rng: np.random.Generator, n: int) -> np.ndarray:
        v = rng.random(n)
        w = rng.random(n)
        k = np.searchsorted(self.cum, v, side="right") - 1
        far = k >= self.width.size
        k = np.minimum(k, self.width.size - 1)
        a = self.slope[k]
        h = self.width[k]
        small = np.abs(a * h) < 1e-8
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            inner = np.log1p(w * np.expm1(a * h)) / np.where(small, 1.0, a)
        du = np.where(small, w * h, inner)
        u = self.edges[k] + np.clip(du, 0.0, h)
        if far.any():
            # power-law tail beyond the grid: density ~ e^{slope u}
            u_far = self.edges[-1] - np.log1p(-rng.random(int(far.sum()))) / (-self.far_slope)
            u = np.array(u)
            u[far] = u_far
        return u


def _cells_from_tail(
    log_g: Callable[[np.ndarray], np.ndarray],
    tail: Callable[[float], float],
    lo: float,
    hi: Optional[float],
    *,
    per_decade: int = 32,
    rel_floor: float = 1e-14,
    max_decades: int = 40,
) -> _LogCellSampler:
    """Build a sampler for the law with survival ``tail(s)/tail(lo)`` on ``(lo, hi)``."""
    total = tail(lo)
    if not total > 0:
        raise ValueError("no mass above the cutoff")
    du = math.log(10.0) / per_decade
    edges = [math.log(lo)]
    tails = [total]
    u_hi = math.inf if hi is None else math.log(hi)
    while True:
        u_next = edges[-1] + du
        if u_next >= u_hi:
            edges.append(u_hi)
            tails.append(0.0)
            break
        t_next = tail(math.exp(u_next))
        edges.append(u_next)
        tails.append(t_next)
        # heavy tails stop after max_decades; the rest continues the last cell's power law
        if t_next <= rel_floor * total or len(edges) > max_decades * per_decade:
            break
    edges_u = np.array(edges)
    tails_a = np.array(tails)
    masses = np.maximum(-np.diff(tails_a), 0.0)
    far = float(tails_a[-1])
    with np.errstate(divide="ignore"):
        lg = np.asarray(log_g(edges_u), dtype=float) + edges_u
    if np.isfinite(u_hi) and edges_u[-1] == u_hi:
        # the density may vanish exactly at the support edge
        lg[-1] = lg[-1] if np.isfinite(lg[-1]) else lg[-2]
    return _LogCellSampler(edges_u, lg, masses, far)


# ---------------------------------------------------------------------------
# Meyer splits


@dataclass(frozen=True)
class MeyerSplit:
    """``j = j_small + j_big`` with a finite-rate big part.

    ``big_rate`` is the total rate of big jumps and ``sample_big`` draws their
    displacement vectors.
    """

    kind: str
    r0: float
    dim: int
    small_kernel: RadialJumpKernel
    big_kernel: RadialJumpKernel
    big_rate: float
    m2_small: float
    _radii: Callable[[np.random.Generator, int], np.ndarray] = field(repr=False, compare=False)

    @property
    def split_id(self) -> str:
        return f"{self.kind}:{self.r0:.6g}"

    def small_density(self, r) -> np.ndarray:
        return self.small_kernel.density(r)

    def big_density(self, r) -> np.ndarray:
        return self.big_kernel.density(r)

    def sample_big_radii(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self._radii(rng, n)

    def sample_big(self, rng: np.random.Generator, n: int) -> np.ndarray:
        r = self._radii(rng, n)
        return r[:, None] * random_directions(rng, n, self.dim)


def _tail_radius_sampler(kernel: RadialJumpKernel, r0: float):
    d = kernel.dim
    lam0 = tail_lambda(kernel, r0)
    if not lam0 > 0:
        raise ValueError("no big jumps: lambda(r0) = 0")
    base = kernel.log_density
    sampler = _cells_from_tail(
        lambda u: (d - 1) * u + base(u),
        lambda s: tail_lambda(kernel, s),
        r0,
        kernel.support_hint,
    )

    def radii(rng, n):
        return np.exp(sampler.sample_log(rng, n))

    return lam0, radii


def small_large_split(kernel: RadialJumpKernel, r0: float) -> MeyerSplit:
    """Small part ``j 1{r <= r0}``; big part ``j 1{r > r0}`` at rate ``lambda(r0)``."""
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    lam0, radii = _tail_radius_sampler(kernel, r0)
    lr0 = math.log(r0)
    base = kernel.log_density
    small = RadialJumpKernel(
        dim=kernel.dim,
        log_density=lambda u: np.where(np.asarray(u) <= lr0, base(u), -np.inf),
        name=f"{kernel.name}|small<={r0:g}",
        support_hint=r0,
        breakpoints=tuple(sorted(set(kernel.breakpoints) | {r0})),
        domain=kernel.domain,
    )
    big = RadialJumpKernel(
        dim=kernel.dim,
        log_density=lambda u: np.where(np.asarray(u) > lr0, base(u), -np.inf),
        name=f"{kernel.name}|big>{r0:g}",
        support_hint=kernel.support_hint,
        breakpoints=tuple(sorted(set(kernel.breakpoints) | {r0})),
        domain=kernel.domain,
    )
    return MeyerSplit(
        kind="small_large", r0=r0, dim=kernel.dim, small_kernel=small, big_kernel=big,
        big_rate=lam0, m2_small=truncated_moment(kernel, r0), _radii=radii,
    )


def small_flat_split(kernel: RadialJumpKernel, r0: float) -> MeyerSplit:
    """Small part ``j - j(r0)/2`` on ``(0, r0]``; big part flat ``j(r0)/2`` inside ``r0`` plus ``j`` outside."""
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    d = kernel.dim
    j0 = float(kernel.density(r0))
    if not j0 > 0:
        raise ValueError("degenerate split: j(r0) = 0")
    flat = 0.5 * j0
    lflat = math.log(flat)
    inner_rate = flat * ball_volume(d) * r0 ** d
    lam0 = tail_lambda(kernel, r0)
    if lam0 > 0:
        _, outer = _tail_radius_sampler(kernel, r0)
    else:
        outer = None
    big_rate = lam0 + inner_rate
    p_inner = inner_rate / big_rate
    lr0 = math.log(r0)
    base = kernel.log_density

    def small_log(u):
        u = np.asarray(u, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = base(u) + np.log1p(-np.exp(lflat - base(u)))
        return np.where(u <= lr0, val, -np.inf)

    def big_log(u):
        u = np.asarray(u, dtype=float)
        return np.where(u <= lr0, lflat, base(u))

    small = RadialJumpKernel(dim=d, log_density=small_log, name=f"{kernel.name}|flat-small<={r0:g}",
                             support_hint=r0, breakpoints=tuple(sorted(set(kernel.breakpoints) | {r0})),
                             domain=kernel.domain)
    big = RadialJumpKernel(dim=d, log_density=big_log, name=f"{kernel.name}|flat-big({r0:g})",
                           support_hint=kernel.support_hint,
                           breakpoints=tuple(sorted(set(kernel.breakpoints) | {r0})), domain=kernel.domain)
    from .kernels import surface_area

    m2_small = truncated_moment(kernel, r0) - flat * surface_area(d) * r0 ** (d + 2) / (d + 2)

    def radii(rng, n):
        inner = rng.random(n) < p_inner
        out = np.empty(n)
        k = int(inner.sum())
        out[inner] = r0 * rng.random(k) ** (1.0 / d)
        if n - k:
            out[~inner] = outer(rng, n - k)
        return out

    return MeyerSplit(kind="small_flat", r0=r0, dim=d, small_kernel=small, big_kernel=big,
                      big_rate=big_rate, m2_small=m2_small, _radii=radii)


# ---------------------------------------------------------------------------
# jump models


@dataclass(frozen=True)
class JumpModel:
    """Compound Poisson jumps plus Brownian part plus drift.

    ``sample(rng, n)`` returns ``(displacements (n, d), sizes (n,), tag codes (n,))``;
    ``sizes`` are subordinator jump sizes in subordinated models and jump
    lengths otherwise.  ``diffusion`` is a per-coordinate variance rate and
    ``drift`` a scalar drift (only for one-dimensional monotone models).
    """

    dim: int
    rate: float
    sample: Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray, np.ndarray]]
    tags: tuple[str, ...]
    diffusion: float = 0.0
    drift: float = 0.0
    m2_small: float = 0.0
    description: str = ""
    # subordinated models: (sizes, tag codes) only; displacement is sqrt(2 size) Z
    sample_sizes: Optional[Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]]] = None


def _subordinator_jumps(sub: SubordinatorSpec, eps: float):
    """Rate and sampler of subordinator jumps larger than ``eps``; tag codes are mixture indices."""
    if sub.mixture is not None:
        rates = np.array([h for h, _ in sub.mixture])
        scales = np.array([a for _, a in sub.mixture])
        thresh = eps / scales
        p_above = y_sf(thresh)
        w = rates * p_above
        rate = float(w.sum())
        cum = np.cumsum(w) / rate
        sf0 = p_above

        def sample(rng, n):
            k = np.minimum(np.searchsorted(cum, rng.random(n), side="right"), len(cum) - 1)
            # Y conditioned on Y > thresh[k], by inverting P(Y > y) = v * P(Y > thresh)
            v = (1.0 - rng.random(n)) * sf0[k]
            y = np.where(v >= 1.0 / 3.0, 1.5 * (1.0 - v), 1.0 / np.sqrt(3.0 * v))
            y = np.maximum(y, thresh[k])
            return scales[k] * y, k

        tags = tuple(f"type_n({i + 1})" for i in range(len(rates)))
        return rate, sample, tags

    rate = sub.tail(eps)
    if not math.isfinite(rate):
        raise ValueError(f"subordinator has infinite rate above cutoff {eps}")
    if rate <= 0:

        def no_jumps(rng, n):
            if n:
                raise RuntimeError("no jumps above the cutoff")
            return np.zeros(0), np.zeros(0, dtype=int)

        return 0.0, no_jumps, (f"big(sbm:{eps:.6g})",)
    cells = _cells_from_tail(sub.log_density, sub.tail, eps, None)

    def sample(rng, n):
        return np.exp(cells.sample_log(rng, n)), np.zeros(n, dtype=int)

    return rate, sample, (f"big(sbm:{eps:.6g})",)


def build_model(spec: ProcessSpec, cfg: SimConfig, mode: Optional[str] = None) -> JumpModel:
    """Reduce ``spec`` to a :class:`JumpModel` for ``mode``."""
    if not spec.simulable:
        raise ValueError(f"{spec.name} is not simulable (model kernel only)")
    mode = mode or ("direct_kernel" if spec.has_explicit_kernel else "sbm")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    eps = cfg.cutoff
    d = spec.dim

    if mode == "direct_kernel":
        split = small_large_split(spec.kernel, eps)
        diffusion = split.m2_small / d if cfg.gaussian_surrogate else 0.0

        def sample(rng, n):
            r = split.sample_big_radii(rng, n)
            return r[:, None] * random_directions(rng, n, d), r, np.zeros(n, dtype=int)

        return JumpModel(dim=d, rate=split.big_rate, sample=sample, tags=(f"big({split.split_id})",),
                         diffusion=diffusion, m2_small=split.m2_small,
                         description=f"direct kernel, cutoff {eps:g}")

    sub = spec.subordinator
    if sub is None:
        raise ValueError(f"{spec.name} has no subordinator; use mode='direct_kernel'")
    rate, jumps, tags = _subordinator_jumps(sub, eps)
    small = sub.drift + sub.small_mass(eps)
    if mode == "subordinator":

        def sample(rng, n):
            s, k = jumps(rng, n)
            return s[:, None], s, k

        return JumpModel(dim=1, rate=rate, sample=sample, tags=tags, drift=small,
                         description=f"subordinator, cutoff {eps:g}")

    def sample(rng, n):
        s, k = jumps(rng, n)
        return np.sqrt(2.0 * s)[:, None] * rng.standard_normal((n, d)), s, k

    return JumpModel(dim=d, rate=rate, sample=sample, tags=tags, diffusion=2.0 * small,
                     m2_small=2.0 * d * small, description=f"subordinate Brownian motion, cutoff {eps:g}")


def mixture_model(rates: Sequence[float], scales: Sequence[float], dim: int, *,
                  folded_mass_rate: float = 0.0, first_type: int = 1) -> JumpModel:
    """Subordinate Brownian motion with subordinator ``sum_k rate_k * law(scale_k * Y)``.

    ``folded_mass_rate`` is subordinator drift standing in for omitted types;
    it becomes Brownian motion with variance rate ``2 * folded_mass_rate``.
    """
    rates = np.asarray(rates, dtype=float)
    scales = np.asarray(scales, dtype=float)
    total = float(rates.sum())
    cum = np.cumsum(rates) / total

    def sizes(rng, n):
        k = np.minimum(np.searchsorted(cum, rng.random(n), side="right"), len(cum) - 1)
        return scales[k] * sample_y(rng, n), k

    def sample(rng, n):
        s, k = sizes(rng, n)
        return np.sqrt(2.0 * s)[:, None] * rng.standard_normal((n, dim)), s, k

    tags = tuple(f"type_n({first_type + i})" for i in range(len(rates)))
    return JumpModel(dim=dim, rate=total, sample=sample, tags=tags,
                     diffusion=2.0 * folded_mass_rate, m2_small=2.0 * dim * folded_mass_rate,
                     description="scale mixture of Y", sample_sizes=sizes)


# ---------------------------------------------------------------------------
# single trajectories


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered jump record of one path on ``[0, horizon]``.

    ``drift`` is the deterministic velocity (subordinator mode only); the
    Brownian part appears as ``small_surrogate`` increments on the step grid.
    """

    times: np.ndarray
    displacements: np.ndarray
    tags: tuple[str, ...]
    start: np.ndarray
    horizon: float
    seed: int
    replica: int
    drift: float = 0.0
    surrogate_m2: float = 0.0

    def __post_init__(self):
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError("event times must be strictly increasing")

    @property
    def dim(self) -> int:
        return int(self.start.size)

    def position(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right"))
        return self.start + self.displacements[:k].sum(axis=0) + self.drift * min(t, self.horizon)

    def big_jump_times(self) -> np.ndarray:
        mask = np.array([tag != SMALL_SURROGATE for tag in self.tags], dtype=bool)
        return self.times[mask] if mask.size else self.times


def sample_path(spec: ProcessSpec, cfg: SimConfig, mode: Optional[str] = None, *,
                replica: int = 0, start: Optional[Sequence[float]] = None) -> Trajectory:
    """One trajectory on ``[0, cfg.horizon]``."""
    model = build_model(spec, cfg, mode)
    rng = stream(cfg.seed, "path", replica)
    d = model.dim
    x0 = np.zeros(d) if start is None else np.asarray(start, dtype=float).reshape(d)
    n = int(rng.poisson(model.rate * cfg.horizon)) if model.rate > 0 else 0
    jt = np.sort(rng.random(n) * cfg.horizon)
    dx, _, codes = model.sample(rng, n)
    tags = [model.tags[c] for c in codes]
    times, disp = jt, dx.reshape(n, d)
    if model.diffusion > 0 and cfg.gaussian_surrogate:
        k = max(1, int(math.ceil(cfg.horizon / cfg.step)))
        grid = np.minimum(np.arange(1, k + 1) * cfg.step, cfg.horizon)
        dt = np.diff(np.concatenate([[0.0], grid]))
        g = np.sqrt(model.diffusion * dt)[:, None] * rng.standard_normal((k, d))
        times = np.concatenate([times, grid])
        disp = np.concatenate([disp, g])
        tags = tags + [SMALL_SURROGATE] * k
        order = np.argsort(times, kind="stable")
        times, disp = times[order], disp[order]
        tags = [tags[i] for i in order]
    return Trajectory(times=times, displacements=disp, tags=tuple(tags), start=x0,
                      horizon=cfg.horizon, seed=cfg.seed, replica=replica, drift=model.drift,
                      surrogate_m2=model.m2_small)


def quadratic_variation(traj: Trajectory, t: float) -> float:
    """Sum of squared jump lengths up to ``t``; surrogate steps are excluded.

    Their expected contribution is ``traj.surrogate_m2 * t``.
    """
    if t > traj.horizon * (1 + 1e-12):
        raise ValueError("t exceeds the trajectory horizon")
    if not traj.times.size:
        return 0.0
    k = int(np.searchsorted(traj.times, t, side="right"))
    keep = np.array([tag != SMALL_SURROGATE for tag in traj.tags[:k]], dtype=bool)
    if not keep.any():
        return 0.0
    return float(np.sum(traj.displacements[:k][keep] ** 2))


# ---------------------------------------------------------------------------
# batch: terminal values


@dataclass(frozen=True)
class TerminalBatch:
    positions: np.ndarray
    jump_qv: np.ndarray
    jump_counts: np.ndarray
    surrogate_qv: float
    seed: int


def _blocks(n: int, size: int = BLOCK):
    return [(b, b * size, min(n, (b + 1) * size)) for b in range((n + size - 1) // size)]


def terminal_batch(spec: ProcessSpec, cfg: SimConfig, n_paths: int, t: Optional[float] = None,
                   mode: Optional[str] = None, model: Optional[JumpModel] = None) -> TerminalBatch:
    """Values at time ``t`` of ``n_paths`` independent replicas (no stepping needed)."""
    t = cfg.horizon if t is None else float(t)
    model = model or build_model(spec, cfg, mode)
    d = model.dim

    def run(block):
        b, lo, hi = block
        rng = stream(cfg.seed, "terminal", b)
        m = hi - lo
        counts = rng.poisson(model.rate * t, m) if model.rate > 0 else np.zeros(m, dtype=int)
        total = int(counts.sum())
        dx, _, _ = model.sample(rng, total)
        owner = np.repeat(np.arange(m), counts)
        pos = np.zeros((m, d))
        for c in range(d):
            pos[:, c] = np.bincount(owner, weights=dx[:, c], minlength=m)
        qv = np.bincount(owner, weights=np.sum(dx * dx, axis=1), minlength=m)
        if model.diffusion > 0:
            pos += math.sqrt(model.diffusion * t) * rng.standard_normal((m, d))
        pos += model.drift * t
        return pos, qv, counts

    parts = map_ordered(run, _blocks(n_paths))
    return TerminalBatch(
        positions=np.concatenate([p[0] for p in parts]),
        jump_qv=np.concatenate([p[1] for p in parts]),
        jump_counts=np.concatenate([p[2] for p in parts]),
        surrogate_qv=model.m2_small * t,
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# batch: exits


CAUSE_NONE, CAUSE_SMALL, CAUSE_BIG = 0, 1, 2
_CAUSE_NAMES = {CAUSE_NONE: "none", CAUSE_SMALL: "small_path", CAUSE_BIG: "big_jump"}


@dataclass(frozen=True)
class ExitBatch:
    """Exit data for many replicas from one start.

    ``tau`` is ``inf`` where no exit happened before the run ended.  With a
    clock, ``clock`` holds the clock time and ``at_clock`` the position at it
    (``nan`` when the run stopped earlier).  ``censored`` marks runs that hit
    the horizon with neither exit nor clock.
    """

    tau: np.ndarray
    exit_position: np.ndarray
    cause: np.ndarray
    exit_tag: np.ndarray
    clock: np.ndarray
    at_clock: np.ndarray
    censored: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return int(self.tau.size)

    @property
    def exited(self) -> np.ndarray:
        return np.isfinite(self.tau)

    def exited_before_clock(self, strict: bool = True) -> np.ndarray:
        if strict:
            return self.tau < self.clock
        return self.tau <= self.clock


@dataclass(frozen=True)
class ExitRecord:
    tau: float
    position_at_tau: np.ndarray
    exited_before: Optional[float]
    cause: str
    censored: bool = False


def _concat_batches(parts, seed) -> ExitBatch:
    return ExitBatch(*(np.concatenate([getattr(p, f) for p in parts]) for f in (
        "tau", "exit_position", "cause", "exit_tag", "clock", "at_clock", "censored")), seed=seed)


@dataclass
class _Partial:
    tau: np.ndarray
    exit_position: np.ndarray
    cause: np.ndarray
    exit_tag: np.ndarray
    clock: np.ndarray
    at_clock: np.ndarray
    censored: np.ndarray


def _empty(m: int, d: int) -> _Partial:
    return _Partial(
        tau=np.full(m, np.inf), exit_position=np.full((m, d), np.nan),
        cause=np.zeros(m, dtype=np.int8), exit_tag=np.full(m, -1, dtype=np.int16),
        clock=np.full(m, np.inf), at_clock=np.full((m, d), np.nan), censored=np.zeros(m, dtype=bool),
    )


def _step_exit(model: JumpModel, m: int, radius: float, start: np.ndarray, rng, *,
               step: float, clock_rate: Optional[float], horizon: float,
               run_to_clock: bool) -> _Partial:
    """Time-stepped runner: Brownian increments on a grid of width ``step``.

    Jumps arrive at exact exponential times but are applied at the end of the
    step that contains them; the exit test happens at every step end.
    """
    d = model.dim
    out = _empty(m, d)
    end = np.full(m, horizon)
    if clock_rate is not None:
        out.clock = rng.exponential(1.0 / clock_rate, m)
        end = out.clock if run_to_clock else np.minimum(out.clock, horizon)
    pos = np.broadcast_to(start, (m, d)).copy()
    t = np.zeros(m)
    next_jump = rng.exponential(1.0 / model.rate, m) if model.rate > 0 else np.full(m, np.inf)
    idx = np.arange(m)
    sd = math.sqrt(model.diffusion)
    r2 = radius * radius
    while idx.size:
        ti = t[idx]
        dt = np.minimum(step, end[idx] - ti)
        p = pos[idx] + (sd * np.sqrt(dt))[:, None] * rng.standard_normal((idx.size, d))
        mid_out = np.einsum("ij,ij->i", p, p) >= r2
        t_new = ti + dt
        jumped = np.zeros(idx.size, dtype=bool)
        last_tag = np.full(idx.size, -1, dtype=np.int16)
        due = np.flatnonzero(next_jump[idx] <= t_new)
        while due.size:
            dx, _, codes = model.sample(rng, due.size)
            p[due] += dx
            jumped[due] = True
            last_tag[due] = codes
            g = idx[due]
            next_jump[g] += rng.exponential(1.0 / model.rate, due.size)
            due = due[next_jump[g] <= t_new[due]]
        t[idx] = t_new
        pos[idx] = p
        outside = np.einsum("ij,ij->i", p, p) >= r2
        fresh = outside & ~np.isfinite(out.tau[idx])
        if fresh.any():
            g = idx[fresh]
            out.tau[g] = t_new[fresh]
            out.exit_position[g] = p[fresh]
            big = jumped[fresh] & ~mid_out[fresh]
            out.cause[g] = np.where(big, CAUSE_BIG, CAUSE_SMALL)
            out.exit_tag[g] = np.where(big, last_tag[fresh], -1)
        finished = t_new >= end[idx] * (1 - 1e-15)
        if clock_rate is not None:
            at = finished & (end[idx] == out.clock[idx])
            out.at_clock[idx[at]] = p[at]
        if not run_to_clock:
            finished |= np.isfinite(out.tau[idx])
        if clock_rate is None or not run_to_clock:
            cens = finished & ~np.isfinite(out.tau[idx]) & (t_new < out.clock[idx])
            out.censored[idx[cens]] = True
        idx = idx[~finished]
    return out


def _event_exit(model: JumpModel, m: int, radius: float, start: np.ndarray, rng, *,
                clock_rate: Optional[float], size_clock: Optional[float], horizon: float,
                max_events: int = 10**9) -> _Partial:
    """Event-driven runner: exit tested at jump times only.

    The Brownian part (if any) is added exactly at each event.  With a drift
    (one-dimensional monotone models) the crossing between events is exact.
    ``size_clock`` stops a path at its first jump whose size exceeds the
    threshold; that jump does not count as an exit before the clock.
    """
    d = model.dim
    out = _empty(m, d)
    limit = np.full(m, horizon)
    if clock_rate is not None:
        out.clock = rng.exponential(1.0 / clock_rate, m)
        limit = np.minimum(limit, out.clock)
    pos = np.broadcast_to(start, (m, d)).copy()
    t = np.zeros(m)
    used = np.zeros(m, dtype=np.int64)
    idx = np.arange(m)
    r2 = radius * radius
    drift = model.drift
    if model.rate <= 0:
        if model.diffusion > 0 or d != 1 or drift <= 0:
            raise ValueError("event runner needs jumps or a one-dimensional drift")
        # deterministic motion at speed drift
        t_hit = (radius - pos[:, 0]) / drift
        hit = t_hit <= limit
        out.tau[hit] = t_hit[hit]
        out.exit_position[hit, 0] = radius
        out.cause[hit] = CAUSE_SMALL
        miss = ~hit
        if clock_rate is not None:
            out.at_clock[miss, 0] = pos[miss, 0] + drift * out.clock[miss]
            out.censored[miss] = out.clock[miss] > horizon
        else:
            out.censored[miss] = True
        return out
    while idx.size:
        na = idx.size
        k = int(min(4096, max(16, (1 << 21) // na)))
        dt = rng.exponential(1.0 / model.rate, (na, k))
        if model.sample_sizes is not None:
            # one Gaussian carries both the jump and the Brownian part since the last event
            size, codes = model.sample_sizes(rng, na * k)
            size = size.reshape(na, k)
            codes = codes.reshape(na, k)
            var = 2.0 * size + model.diffusion * dt
            dx = np.sqrt(var)[:, :, None] * rng.standard_normal((na, k, d))
        else:
            dx, size, codes = model.sample(rng, na * k)
            dx = dx.reshape(na, k, d)
            size = size.reshape(na, k)
            codes = codes.reshape(na, k)
            if model.diffusion > 0:
                dx = dx + np.sqrt(model.diffusion * dt)[:, :, None] * rng.standard_normal((na, k, d))
        times = t[idx, None] + np.cumsum(dt, axis=1)
        if drift:
            dx = dx + drift * dt[:, :, None]
        path = pos[idx, None, :] + np.cumsum(dx, axis=1)
        n2 = np.einsum("ijk,ijk->ij", path, path)
        exit_ev = n2 >= r2
        stop_ev = times >= limit[idx, None]
        if size_clock is not None:
            stop_ev |= size > size_clock
        hit = exit_ev | stop_ev
        any_hit = hit.any(axis=1)
        first = np.where(any_hit, hit.argmax(axis=1), k - 1)
        rows = np.arange(na)
        g = idx
        ft = times[rows, first]
        fp = path[rows, first]
        is_stop = stop_ev[rows, first] & any_hit
        is_exit = exit_ev[rows, first] & any_hit
        timed_out = is_stop & (ft >= limit[g])
        if drift:
            # monotone model: the drift may cross before the event
            prev_p = np.where(first[:, None] > 0, path[rows, np.maximum(first - 1, 0)], pos[g])
            prev_t = np.where(first > 0, times[rows, np.maximum(first - 1, 0)], t[g])
            need = radius - prev_p[:, 0]
            t_cross = prev_t + need / drift
            crossed = any_hit & (t_cross < ft) & (t_cross <= limit[g])
            cross_p = np.array(prev_p)
            cross_p[:, 0] = radius
            out.tau[g[crossed]] = t_cross[crossed]
            out.exit_position[g[crossed]] = cross_p[crossed]
            out.cause[g[crossed]] = CAUSE_SMALL
            is_exit &= ~crossed
            timed_out &= ~crossed
            is_stop &= ~crossed
        # an event past the time limit happens after the clock/horizon: ignore it
        real_exit = is_exit & ~timed_out & ~(is_stop & (size_clock is not None)
                                             & (size[rows, first] > (size_clock or 0)))
        out.tau[g[real_exit]] = ft[real_exit]
        out.exit_position[g[real_exit]] = fp[real_exit]
        out.cause[g[real_exit]] = CAUSE_BIG
        out.exit_tag[g[real_exit]] = codes[rows, first][real_exit]
        size_stop = is_stop & ~timed_out
        if size_clock is not None and size_stop.any():
            out.clock[g[size_stop]] = ft[size_stop]
            out.at_clock[g[size_stop]] = fp[size_stop]
        if timed_out.any():
            # position at the limit is the position before the overshooting event
            prev_p = np.where(first[:, None] > 0, path[rows, np.maximum(first - 1, 0)], pos[g])
            if clock_rate is not None:
                at_lim = timed_out & (limit[g] == out.clock[g])
                out.at_clock[g[at_lim]] = prev_p[at_lim]
                out.censored[g[timed_out & ~at_lim]] = True
            else:
                out.censored[g[timed_out]] = True
        done = any_hit | np.isfinite(out.tau[g])
        used[g] += first + 1
        done |= used[g] >= max_events
        out.censored[g[(used[g] >= max_events) & ~any_hit]] = True
        t[g] = times[:, -1]
        pos[g] = path[:, -1]
        idx = idx[~done]
    return out


def exit_batch(
    spec: Optional[ProcessSpec],
    cfg: SimConfig,
    n_paths: int,
    radius: float,
    *,
    start: Optional[Sequence[float]] = None,
    clock_rate: Optional[float] = None,
    size_clock: Optional[float] = None,
    run_to_clock: bool = False,
    mode: Optional[str] = None,
    model: Optional[JumpModel] = None,
    purpose: str = "exit",
    engine: str = "auto",
) -> ExitBatch:
    """First exits of ``B(0, radius)`` for ``n_paths`` replicas started at ``start``.

    Runs stop at the exit, at an independent Exponential(``clock_rate``)
    clock, at the first jump with size above ``size_clock``, or at the
    horizon, whichever comes first; with ``run_to_clock`` they continue to
    the clock so that ``at_clock`` is always filled.

    ``engine="auto"`` time-steps models with a Brownian part (step
    ``cfg.step``) and runs pure-jump models event by event; ``"event"``
    forces the event runner, which adds the Brownian part only at jump times.
    """
    if engine not in ("auto", "step", "event"):
        raise ValueError("engine must be 'auto', 'step' or 'event'")
    if not radius > 0:
        raise ValueError("ball radius must be positive")
    model = model or build_model(spec, cfg, mode)
    d = model.dim
    x0 = np.zeros(d) if start is None else np.asarray(start, dtype=float).reshape(d)
    if float(x0 @ x0) >= radius * radius:
        raise ValueError("start must lie inside the ball")
    if engine == "auto":
        stepped = model.diffusion > 0 and size_clock is None
    else:
        stepped = engine == "step"
        if stepped and size_clock is not None:
            raise ValueError("size clocks need the event runner")

    def run(block):
        b, lo, hi = block
        rng = stream(cfg.seed, purpose, b)
        if stepped:
            return _step_exit(model, hi - lo, radius, x0, rng, step=cfg.step, clock_rate=clock_rate,
                              horizon=math.inf if (run_to_clock and clock_rate) else cfg.horizon,
                              run_to_clock=run_to_clock)
        if run_to_clock:
            raise ValueError("run_to_clock needs a time-stepped model")
        return _event_exit(model, hi - lo, radius, x0, rng, clock_rate=clock_rate,
                           size_clock=size_clock, horizon=cfg.horizon)

    size = 1 << 14 if stepped else BLOCK
    parts = map_ordered(run, _blocks(n_paths, size))
    return _concat_batches(parts, cfg.seed)


def exit_event(spec: ProcessSpec, cfg: SimConfig, ball_radius: float,
               reference_clock: Optional[float] = None, *, mode: Optional[str] = None,
               start: Optional[Sequence[float]] = None, replica: int = 0) -> ExitRecord:
    """First exit of one replica, raced against an optional exponential clock."""
    cfg_r = SimConfig(cutoff=cfg.cutoff, step=cfg.step, horizon=cfg.horizon,
                      seed=cfg.seed, gaussian_surrogate=cfg.gaussian_surrogate)
    b = exit_batch(spec, cfg_r, 1, ball_radius, start=start, clock_rate=reference_clock,
                   mode=mode, purpose=f"exit-single-{replica}")
    clock = float(b.clock[0]) if reference_clock is not None else None
    return ExitRecord(
        tau=float(b.tau[0]),
        position_at_tau=b.exit_position[0],
        exited_before=clock,
        cause=_CAUSE_NAMES[int(b.cause[0])],
        censored=bool(b.censored[0]),
    )
