"""Monte Carlo probes: harmonic functions, Harnack ratios, exit laws and the
scale-mixture counterexample."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gammainc

from .catalog import ProcessSpec, level_rate, level_scale, sample_y, y_sf
from .simulate import JumpModel, SimConfig, exit_batch, mixture_model
from .parallel import stream

__all__ = [
    "EstimateWithCI",
    "HarnackExperiment",
    "HarnackResult",
    "CounterexampleParams",
    "SandwichResult",
    "ExitHistogram",
    "CounterexampleReport",
    "sample_heavy_tail_Y",
    "estimate_harmonic",
    "harnack_ratio",
    "sandwich_probabilities",
    "clock_rate",
    "scatter_probability",
    "counterexample_model",
    "exit_histogram",
    "symmetric_bins",
    "histogram_asymmetry",
    "counterexample_harnack",
    "counterexample_experiment",
    "monotone_separation",
    "ci_coverage",
]

Z95 = 1.959963984540054


def sample_heavy_tail_Y(rng: np.random.Generator, size=None):
    """Exact draw(s) of ``Y``: uniform on [0, 1] w.p. 2/3, else ``P(Y > y) = y^-2 / 3``."""
    return sample_y(rng, size)


@dataclass(frozen=True)
class EstimateWithCI:
    mean: float
    stderr: float
    n: int
    seed: int
    successes: Optional[int] = None
    censored: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("an estimate needs n >= 1")

    @classmethod
    def bernoulli(cls, successes: int, n: int, seed: int, censored: int = 0) -> "EstimateWithCI":
        p = successes / n
        return cls(mean=p, stderr=math.sqrt(p * (1 - p) / n), n=n, seed=seed,
                   successes=int(successes), censored=int(censored))

    def ci(self, z: float = Z95) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def as_dict(self) -> dict:
        return asdict(self)


def ci_coverage(p: float = 0.3, n: int = 500, trials: int = 1000, seed: int = 0) -> float:
    """Fraction of Wald 95% intervals that cover ``p`` for a known-``p`` coin."""
    rng = stream(seed, "coverage")
    k = rng.binomial(n, p, trials)
    hits = 0
    for kk in k:
        lo, hi = EstimateWithCI.bernoulli(int(kk), n, seed).ci()
        hits += lo <= p <= hi
    return hits / trials


# ---------------------------------------------------------------------------
# harmonic functions and Harnack ratios


def _jump_free(spec: ProcessSpec) -> bool:
    sub = spec.subordinator
    if sub is None or sub.mixture is not None or spec.kernel_factory is not None:
        return False
    return sub.tail(1e-300) == 0.0


def estimate_harmonic(
    spec: Optional[ProcessSpec],
    cfg: SimConfig,
    inner_radius: float,
    target_radius: float,
    start: Sequence[float],
    replicas: int,
    *,
    mode: Optional[str] = None,
    model: Optional[JumpModel] = None,
    engine: str = "auto",
    purpose: str = "harmonic",
) -> EstimateWithCI:
    """``P_x(|X_tau| < target_radius)`` with ``tau`` the exit time of ``B(0, inner_radius)``.

    Censored paths are dropped from the denominator and reported.
    """
    if model is None and spec is not None and not spec.simulable:
        raise ValueError(f"{spec.name} is not simulable")
    if model is None and spec is not None and _jump_free(spec):
        raise ValueError(f"{spec.name} has no jumps; harmonic probes need a jump process")
    b = exit_batch(spec, cfg, replicas, inner_radius, start=start, mode=mode, model=model,
                   engine=engine, purpose=purpose)
    ok = ~b.censored
    n_ok = int(ok.sum())
    n_cens = replicas - n_ok
    if n_ok == 0:
        raise RuntimeError("every path was censored; raise the horizon")
    if n_cens > 0.01 * replicas:
        warnings.warn(f"{n_cens} of {replicas} paths censored", RuntimeWarning, stacklevel=2)
    inside = np.linalg.norm(b.exit_position[ok], axis=1) < target_radius
    return EstimateWithCI.bernoulli(int(inside.sum()), n_ok, cfg.seed, censored=n_cens)


@dataclass(frozen=True)
class HarnackExperiment:
    """Geometry for comparing ``h(0)`` and ``h(y)`` with
    ``h(x) = P_x(X at exit of B(0, R1 + R2) lies in B(0, R3))``."""

    R1: float
    R2: float
    R3: float
    replicas: int
    cfg: SimConfig
    spec: Optional[ProcessSpec] = None
    model: Optional[JumpModel] = None
    dim: int = 1
    engine: str = "auto"
    mirror: bool = False

    def __post_init__(self):
        if not (0 < self.R1 < self.R2 and self.R1 + self.R2 < self.R3):
            raise ValueError("need 0 < R1 < R2 and R1 + R2 < R3")
        if self.spec is None and self.model is None:
            raise ValueError("experiment needs a spec or a model")
        if self.replicas < 1:
            raise ValueError("replicas must be positive")

    @property
    def d(self) -> int:
        if self.model is not None:
            return self.model.dim
        return self.spec.dim if self.spec is not None else self.dim

    @property
    def y(self) -> np.ndarray:
        d = self.d
        v = np.zeros(d)
        v[0] = (1.0 - 1.0 / d) * self.R1 + self.R2
        return -v if self.mirror else v


@dataclass(frozen=True)
class HarnackResult:
    h0: EstimateWithCI
    hy: EstimateWithCI
    ratio: float
    ratio_stderr: float
    ratio_ci: tuple[float, float]

    def as_dict(self) -> dict:
        return {"h0": self.h0.as_dict(), "hy": self.hy.as_dict(), "ratio": self.ratio,
                "ratio_stderr": self.ratio_stderr, "ratio_ci": list(self.ratio_ci)}


def harnack_ratio(exp: HarnackExperiment) -> HarnackResult:
    """``h(0)/h(y)`` from two independent replica pools; delta-method CI."""
    d = exp.d
    common = dict(mode=None, model=exp.model, engine=exp.engine)
    radius = exp.R1 + exp.R2
    h0 = estimate_harmonic(exp.spec, exp.cfg, radius, exp.R3, np.zeros(d), exp.replicas,
                           purpose="harnack-origin", **common)
    hy = estimate_harmonic(exp.spec, exp.cfg, radius, exp.R3, exp.y, exp.replicas,
                           purpose="harnack-probe", **common)
    if hy.mean == 0:
        raise ZeroDivisionError(f"undefined ratio: h(y) has 0 of {hy.n} successes "
                                f"(h(0): {h0.successes} of {h0.n})")
    ratio = h0.mean / hy.mean
    rel2 = (h0.stderr / h0.mean) ** 2 if h0.mean > 0 else 0.0
    rel2 += (hy.stderr / hy.mean) ** 2
    se = abs(ratio) * math.sqrt(rel2)
    return HarnackResult(h0=h0, hy=hy, ratio=ratio, ratio_stderr=se,
                         ratio_ci=(ratio - Z95 * se, ratio + Z95 * se))


def monotone_separation(ratios: Sequence[HarnackResult]) -> dict:
    """Check a sequence of ratios for a non-increasing trend.

    A pair is *separated* when the successor's upper CI lies below the
    predecessor's point estimate and *flagged* when the intervals only
    overlap.  It is a *violation* when the successor's lower CI lies above
    the predecessor's point estimate.
    """
    separated, flagged, violations = [], [], []
    for i in range(1, len(ratios)):
        prev, cur = ratios[i - 1], ratios[i]
        if cur.ratio_ci[1] < prev.ratio:
            separated.append(i)
        elif cur.ratio_ci[0] > prev.ratio:
            violations.append(i)
        else:
            flagged.append(i)
    return {"monotone": not violations, "separated": separated,
            "flagged": flagged, "violations": violations}


# ---------------------------------------------------------------------------
# exit-position histograms


def symmetric_bins(r: float, outer: float, n_bins: int) -> list[tuple[float, float]]:
    """``n_bins`` equal bins covering ``[-outer, -r]`` and ``[r, outer]`` on the first axis."""
    if n_bins % 2:
        raise ValueError("n_bins must be even")
    edges = np.linspace(r, outer, n_bins // 2 + 1)
    right = list(zip(edges[:-1], edges[1:]))
    left = [(-b, -a) for a, b in reversed(right)]
    return [(float(a), float(b)) for a, b in left + right]


@dataclass(frozen=True)
class ExitHistogram:
    """Binned exit law along the first axis; ``far`` counts exits outside every bin."""

    bins: tuple[tuple[float, float], ...]
    counts: np.ndarray
    n: int
    far: int
    censored: int
    seed: int

    @property
    def phat(self) -> np.ndarray:
        return self.counts / self.n

    @property
    def stderr(self) -> np.ndarray:
        p = self.phat
        return np.sqrt(p * (1 - p) / self.n)

    def rows(self) -> list[tuple[float, float, int, float, float]]:
        return [(lo, hi, int(c), float(p), float(s))
                for (lo, hi), c, p, s in zip(self.bins, self.counts, self.phat, self.stderr)]


def exit_histogram(
    spec: Optional[ProcessSpec],
    cfg: SimConfig,
    r: float,
    x: Sequence[float],
    bins: Sequence[tuple[float, float]],
    replicas: int,
    *,
    model: Optional[JumpModel] = None,
    mode: Optional[str] = None,
    purpose: str = "histogram",
) -> ExitHistogram:
    """Exit positions from ``B(0, r)`` started at ``x``, binned on the first coordinate.

    Bins must lie outside the ball and must not overlap; in dimension
    above one a bin collects exits whose first coordinate falls in it.
    """
    bins = tuple((float(a), float(b)) for a, b in bins)
    srt = sorted(bins)
    for (a, b), (c, _) in zip(srt[:-1], srt[1:]):
        if b > c:
            raise ValueError("bins overlap")
    for a, b in bins:
        if not a < b:
            raise ValueError("empty bin")
        d_model = model.dim if model is not None else spec.dim
        if d_model == 1 and (a < r and b > -r):
            raise ValueError("bins must lie outside the ball")
    b = exit_batch(spec, cfg, replicas, r, start=x, mode=mode, model=model, purpose=purpose)
    ok = ~b.censored
    z = b.exit_position[ok, 0]
    counts = np.zeros(len(bins), dtype=int)
    used = np.zeros(z.size, dtype=bool)
    for i, (lo, hi) in enumerate(bins):
        m = (z >= lo) & (z < hi) & ~used
        counts[i] = int(m.sum())
        used |= m
    n_ok = int(ok.sum())
    return ExitHistogram(bins=bins, counts=counts, n=n_ok, far=int(n_ok - used.sum()),
                         censored=int((~ok).sum()), seed=cfg.seed)


def histogram_asymmetry(h_plus: ExitHistogram, h_minus: ExitHistogram) -> dict:
    """Per-bin ratios ``K(x, bin) / K(-x, bin)`` and the band constant ``C``."""
    if h_plus.bins != h_minus.bins:
        raise ValueError("histograms use different bins")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = h_plus.phat / h_minus.phat
        rel = np.sqrt((h_plus.stderr / h_plus.phat) ** 2 + (h_minus.stderr / h_minus.phat) ** 2)
    finite = np.isfinite(ratio) & (ratio > 0)
    band = np.where(finite, np.maximum(ratio, 1.0 / ratio), np.inf)
    return {"ratio": ratio, "ratio_stderr": ratio * rel, "C": float(band.max()),
            "empty_bins": int((~finite).sum())}


# ---------------------------------------------------------------------------
# the scale-mixture counterexample


_FOLD_MASS_FRACTION = 1e-3


@dataclass(frozen=True)
class CounterexampleParams:
    """Level-``n`` quantities for the mixture with type rates ``H_m`` and scales ``A_m``."""

    n: int
    dim: int = 1

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("level n must be at least 2 (log n <= 0 otherwise)")

    @property
    def H(self) -> float:
        return level_rate(self.n)

    @property
    def A(self) -> float:
        return level_scale(self.n)

    @property
    def s(self) -> float:
        return 2.0 ** -(2 * self.n ** 2 + 2 * self.n + 1)

    @property
    def r2(self) -> float:
        return self.s * math.log(self.n)

    @property
    def r(self) -> float:
        return math.sqrt(self.r2)

    @property
    def scatter_radius(self) -> float:
        return 36.0 * self.r

    def folded_mass(self, keep: int) -> float:
        """Expected subordinator mass of types above ``keep`` per mean clock period."""
        return sum(2.0 ** (-m * m) for m in range(keep + 1, keep + 12)) / self.H

    @property
    def n_keep(self) -> int:
        """Fewest explicit types (at least ``n + 1``) whose folded remainder is negligible."""
        keep = self.n + 1
        while self.folded_mass(keep) >= _FOLD_MASS_FRACTION * self.r2:
            keep += 1
        return keep

    def ordering(self) -> dict:
        """``A_{n+1} < s_n < r_n^2 < A_n`` with successive ratios."""
        seq = [level_scale(self.n + 1), self.s, self.r2, self.A]
        ratios = [b / a for a, b in zip(seq[:-1], seq[1:])]
        return {"values": seq, "ratios": ratios, "strict": all(q > 1 for q in ratios)}

    def as_dict(self) -> dict:
        return {"n": self.n, "dim": self.dim, "H": self.H, "A": self.A, "s": self.s,
                "r2": self.r2, "r": self.r, "scatter_radius": self.scatter_radius,
                "n_keep": self.n_keep, "folded_mass": self.folded_mass(self.n_keep)}


def _log_rate_above(m: int, s: float) -> float:
    """``log(H_m P(A_m Y > s))`` without overflow."""
    ln2 = math.log(2.0)
    log_y0 = math.log(s) + 2 * m * m * ln2
    if log_y0 < 0.0:
        return m * m * ln2 + math.log(float(y_sf(math.exp(log_y0))))
    return m * m * ln2 - math.log(3.0) - 2.0 * log_y0


def _types_above(s: float, m_max: int = 40) -> tuple[np.ndarray, np.ndarray]:
    """Type indices and rates of subordinator jumps above ``s``."""
    ms = np.arange(1, m_max + 1)
    logs = np.array([_log_rate_above(int(m), s) for m in ms])
    keep = logs > logs.max() + math.log(1e-18)
    return ms[keep], np.exp(logs[keep])


def clock_rate(n: int) -> float:
    """``lambda{s_n} = sum_m H_m P(A_m Y > s_n)``, the rate of jumps above ``s_n``."""
    _, rates = _types_above(CounterexampleParams(n).s)
    return float(rates.sum())


def scatter_probability(n: int, dim: int = 1, radius: Optional[float] = None) -> float:
    """``P(|dX(T)| <= radius)`` for the displacement at the first jump above ``s_n``.

    The jump ``dS`` at the clock has the law of a subordinator jump
    conditioned to exceed ``s_n``; given ``dS`` the displacement is
    ``sqrt(2 dS) Z`` with ``Z`` standard normal in ``R^dim``.
    """
    p = CounterexampleParams(n, dim)
    rho = p.scatter_radius if radius is None else radius
    s = p.s
    ms, rates = _types_above(s)
    total = rates.sum()
    out = 0.0
    for m, w in zip(ms, rates / total):
        a = level_scale(int(m))
        y0 = s / a
        k = rho * rho / (4.0 * a)

        def g(y):
            return gammainc(dim / 2.0, k / y)

        acc = 0.0
        if y0 < 1.0:
            acc += integrate.quad(g, y0, 1.0, epsabs=0, epsrel=1e-10, limit=200)[0] * (2.0 / 3.0)
        v0 = 1.0 / max(1.0, y0) ** 2
        # beyond y = 1 substitute v = y^-2: (2/3) y^-3 dy = (1/3) dv
        acc += integrate.quad(lambda v: g(1.0 / math.sqrt(v)) if v > 0 else 0.0, 0.0, v0,
                              epsabs=0, epsrel=1e-10, limit=200)[0] / 3.0
        out += w * acc / float(y_sf(y0))
    return float(out)


def counterexample_model(n: int, dim: int = 1) -> JumpModel:
    """Types ``1..n_keep`` explicit; the rest folded into subordinator drift."""
    p = CounterexampleParams(n, dim)
    keep = p.n_keep
    rates = [level_rate(m) for m in range(1, keep + 1)]
    scales = [level_scale(m) for m in range(1, keep + 1)]
    folded = sum(2.0 ** (-m * m) for m in range(keep + 1, keep + 12))
    return mixture_model(rates, scales, dim, folded_mass_rate=folded)


def _event_config(seed: int) -> SimConfig:
    return SimConfig(cutoff=1.0, step=1.0, horizon=math.inf, seed=seed)


@dataclass(frozen=True)
class SandwichResult:
    params: CounterexampleParams
    clock_rate: float
    p_exit: EstimateWithCI
    p_scatter_small: float

    @property
    def scatter_to_exit(self) -> float:
        return self.p_scatter_small / self.p_exit.mean if self.p_exit.mean > 0 else math.inf

    def as_dict(self) -> dict:
        return {"n": self.params.n, "clock_rate": self.clock_rate, "clock_rate_over_H": self.clock_rate / self.params.H,
                "p_exit": self.p_exit.as_dict(), "p_scatter_small": self.p_scatter_small,
                "scatter_to_exit": self.scatter_to_exit}


def sandwich_probabilities(spec: Optional[ProcessSpec], n: int, *, replicas: int = 20000,
                           seed: int = 0, dim: Optional[int] = None) -> SandwichResult:
    """Exit probability of ``B(0, r_n)`` before the first jump above ``s_n``,
    and the exact probability that this jump lands within ``36 r_n``."""
    if spec is not None and not spec.name.startswith("counterexample"):
        raise ValueError("sandwich probabilities are defined for the counterexample family")
    d = dim or (spec.dim if spec is not None else 1)
    p = CounterexampleParams(n, d)
    model = counterexample_model(n, d)
    b = exit_batch(None, _event_config(seed), replicas, p.r, size_clock=p.s, model=model,
                   engine="event", purpose=f"sandwich-{n}")
    hits = int(b.exited_before_clock(strict=True).sum())
    return SandwichResult(params=p, clock_rate=clock_rate(n),
                          p_exit=EstimateWithCI.bernoulli(hits, replicas, seed),
                          p_scatter_small=scatter_probability(n, d))


def counterexample_harnack(n: int, replicas: int, seed: int, dim: int = 1) -> HarnackResult:
    p = CounterexampleParams(n, dim)
    exp = HarnackExperiment(R1=p.r, R2=5 * p.r, R3=30 * p.r, replicas=replicas,
                            cfg=_event_config(seed), model=counterexample_model(n, dim),
                            dim=dim, engine="event")
    return harnack_ratio(exp)


@dataclass(frozen=True)
class CounterexampleReport:
    params: dict
    estimates: dict
    seed: int
    runtime: float

    def as_dict(self) -> dict:
        return {"params": self.params, "estimates": self.estimates, "seed": self.seed,
                "runtime": self.runtime}

    @classmethod
    def from_dict(cls, data: dict) -> "CounterexampleReport":
        return cls(params=data["params"], estimates=data["estimates"], seed=int(data["seed"]),
                   runtime=float(data["runtime"]))


def counterexample_experiment(n: int, replicas: int, seed: int, dim: int = 1) -> CounterexampleReport:
    """Sandwich probabilities and the Harnack ratio at level ``n``."""
    if not 2 <= n <= 6:
        raise ValueError("level n must lie in [2, 6]")
    t0 = time.perf_counter()
    p = CounterexampleParams(n, dim)
    sw = sandwich_probabilities(None, n, replicas=replicas, seed=seed, dim=dim)
    hr = counterexample_harnack(n, replicas, seed, dim)
    params = p.as_dict()
    params["ordering"] = p.ordering()
    params["geometry"] = {"R1": p.r, "R2": 5 * p.r, "R3": 30 * p.r}
    estimates = {"sandwich": sw.as_dict(), "harnack": hr.as_dict()}
    return CounterexampleReport(params=params, estimates=estimates, seed=seed,
                                runtime=time.perf_counter() - t0)
