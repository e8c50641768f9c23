"""Built-in process families.

Each entry carries whichever representations are genuinely available: a
closed-form kernel, a subordinator (from which the kernel is derived by
heat-kernel mixing), or a model kernel built from the derivative of a
Laplace exponent via ``j(r) = r^(-d-2) phi'(r^-2)`` (known only up to a
constant, and not simulable).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import exp1, logsumexp

from .kernels import (
    RadialJumpKernel,
    SubordinatorSpec,
    kernel_from_subordinator,
    power_kernel,
)
from .quadrature import integrate_log

__all__ = [
    "ProcessSpec",
    "BUILTINS",
    "builtin",
    "describe_builtins",
    "y_cdf",
    "y_sf",
    "sample_y",
    "level_rate",
    "level_scale",
    "counterexample_subordinator",
    "stable_subordinator",
]


@dataclass(frozen=True)
class ProcessSpec:
    """A named process with an optional kernel and/or subordinator.

    ``kernel_factory`` is called at most once; subordinated kernels are
    expensive to tabulate and many callers only need the subordinator.
    """

    name: str
    dim: int
    params: dict = field(default_factory=dict)
    subordinator: Optional[SubordinatorSpec] = None
    kernel_factory: Optional[Callable[[], RadialJumpKernel]] = None
    simulable: bool = True
    notes: str = ""

    def __post_init__(self):
        if self.subordinator is None and self.kernel_factory is None:
            raise ValueError("a process needs a kernel or a subordinator")

    @cached_property
    def kernel(self) -> RadialJumpKernel:
        if self.kernel_factory is not None:
            return self.kernel_factory()
        return kernel_from_subordinator(self.subordinator, self.dim)

    @property
    def has_explicit_kernel(self) -> bool:
        return self.kernel_factory is not None


# ---------------------------------------------------------------------------
# the heavy-tailed mark Y: density 2/3 on [0, 1] and (2/3) y^-3 beyond


def y_cdf(y):
    """``P(Y <= y)``."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(y <= 0, 0.0, np.where(y <= 1, 2.0 * y / 3.0, 1.0 - 1.0 / (3.0 * y * y)))


def y_sf(y):
    """``P(Y > y)``."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(y <= 0, 1.0, np.where(y <= 1, 1.0 - 2.0 * y / 3.0, 1.0 / (3.0 * y * y)))


def sample_y(rng: np.random.Generator, size=None) -> np.ndarray:
    """Exact inverse-CDF draws of Y from one uniform each."""
    u = rng.random(size)
    v = 1.0 - u  # in (0, 1]
    return np.where(u < 2.0 / 3.0, 1.5 * u, 1.0 / np.sqrt(3.0 * v))


def level_rate(n: int) -> float:
    """``H_n = 2^(n^2)``: rate of type-n subordinator jumps."""
    return 2.0 ** (n * n)


def level_scale(n: int) -> float:
    """``A_n = 2^(-2 n^2)``: size scale of type-n subordinator jumps."""
    return 2.0 ** (-2 * n * n)


def counterexample_subordinator(n_max: int = 6) -> SubordinatorSpec:
    """``m(t) = (2/3) sum_{n<=n_max} 2^(3n^2) min{1, (2^(2n^2) t)^-3}``."""
    if int(n_max) != n_max or n_max < 1:
        raise ValueError("n_max must be a positive integer")
    ns = np.arange(1, n_max + 1, dtype=float)
    log2 = math.log(2.0)
    c3 = 3.0 * ns * ns * log2
    c2 = 2.0 * ns * ns * log2
    lc = math.log(2.0 / 3.0)

    def log_density(u):
        u = np.asarray(u, dtype=float)
        x = c2[:, None] + u.reshape(-1)[None, :]  # log(2^(2n^2) t)
        terms = c3[:, None] - 3.0 * np.maximum(x, 0.0)
        return (lc + logsumexp(terms, axis=0)).reshape(u.shape)

    rates = tuple((level_rate(k), level_scale(k)) for k in range(1, n_max + 1))

    def tail_mass(s: float) -> float:
        return float(sum(h * y_sf(s / a) for h, a in rates))

    return SubordinatorSpec(
        drift=0.0,
        log_density=log_density,
        name=f"counterexample(n_max={n_max})",
        tail_mass=tail_mass,
        breakpoints=tuple(a for _, a in rates),
        mixture=rates,
        params={"n_max": n_max},
    )


def stable_subordinator(index: float) -> SubordinatorSpec:
    """One-sided stable subordinator with ``phi(lam) = lam^index``."""
    if not (0 < index < 1):
        raise ValueError("subordinator stability index must lie in (0, 1)")
    c = math.log(index / math.gamma(1 - index))

    return SubordinatorSpec(
        drift=0.0,
        log_density=lambda u: c - (1 + index) * np.asarray(u, dtype=float),
        name=f"stable-subordinator({index:g})",
        tail_mass=lambda s: math.exp(c) * s ** (-index) / index,
        params={"index": index},
    )


def gamma_subordinator() -> SubordinatorSpec:
    """``m(t) = e^-t / t`` with ``phi(lam) = log(1 + lam)``."""
    return SubordinatorSpec(
        drift=0.0,
        log_density=lambda u: -np.exp(u) - u,
        name="gamma",
        tail_mass=lambda s: float(exp1(s)),
    )


def _mittag_leffler_subordinator(a: float) -> SubordinatorSpec:
    """Levy density ``(a/t) E_a(-t^a)`` of the subordinator with ``phi = log(1 + lam^a)``.

    ``E_a(-t^a) = int_0^inf e^(-rt) K_a(r) dr`` with the spectral density
    ``K_a(r) = sin(a pi) r^(a-1) / (pi (r^(2a) + 2 r^a cos(a pi) + 1))``;
    tabulated once, asymptotic power laws outside the table.
    """
    sa, ca = math.sin(a * math.pi), math.cos(a * math.pi)

    def log_spectral(v):
        r = np.exp(v)
        ra = r ** a
        return math.log(sa / math.pi) + (a - 1) * v - np.log(ra * ra + 2 * ra * ca + 1)

    def ml(t: float) -> float:
        return integrate_log(lambda v: log_spectral(v) - t * np.exp(v), 0, math.inf, rtol=1e-10).value

    lt = np.linspace(math.log(1e-30), math.log(1e30), 60 * 10 + 1)
    table = np.array([math.log(a) - x + math.log(ml(math.exp(x))) for x in lt])
    interp = PchipInterpolator(lt, table, extrapolate=False)
    small_c = math.log(a)
    big_c = math.log(a / math.gamma(1 - a))

    def log_density(u):
        u = np.asarray(u, dtype=float)
        mid = interp(np.clip(u, lt[0], lt[-1]))
        out = np.where(u < lt[0], small_c - u, mid)
        return np.where(u > lt[-1], big_c - (1 + a) * u, out)

    return SubordinatorSpec(
        drift=0.0,
        log_density=log_density,
        name=f"geometric-stable-subordinator({2 * a:g})",
        params={"beta": 2 * a},
    )


def _model_kernel(dim: int, log_dphi: Callable[[np.ndarray], np.ndarray], name: str, params: dict) -> RadialJumpKernel:
    """``j(r) = r^(-d-2) phi'(r^-2)`` for ``r <= 1``, continued as a power law past 1.

    ``log_dphi`` maps ``log lam`` to ``log phi'(lam)``.  The continuation keeps
    the log-log slope at ``r = 1`` unless that is shallower than ``-(d+1)``.
    """
    h = 1e-5
    f0 = float(log_dphi(np.array([0.0]))[0])
    f_left = (dim + 2) * h + float(log_dphi(np.array([2 * h]))[0])
    # keep the slope when it already decays fast enough, else steepen to -(d+1)
    slope = min((f0 - f_left) / h, -(dim + 1.0))
    j1 = f0

    def log_density(u):
        u = np.asarray(u, dtype=float)
        inner = -(dim + 2) * u + log_dphi(-2.0 * np.minimum(u, 0.0))
        return np.where(u <= 0.0, inner, j1 + slope * u)

    k = RadialJumpKernel(dim=dim, log_density=log_density, name=name,
                         breakpoints=(1.0,), params=params)
    grid = np.geomspace(1e-12, 1e6, 400)
    lj = k.log_density_at(grid)
    if np.any(np.diff(lj) > 1e-9):
        raise ValueError(f"{name}: model kernel is not non-increasing")
    return k


def _iterated_log_dphi(beta: float, n: int):
    a = beta / 2.0

    def log_dphi(v):
        # phi_1(lam) = log(1 + lam^a); phi' of the n-fold composition by the chain rule
        v = np.asarray(v, dtype=float)
        total = np.zeros_like(v)
        lv = v
        for _ in range(n):
            # log(1 + lam^a) without overflow
            log1p_lam_a = np.logaddexp(0.0, a * lv)
            # log phi_1'(lam) = log a + (a-1) log lam - log(1 + lam^a)
            total = total + math.log(a) + (a - 1) * lv - log1p_lam_a
            lv = np.log(log1p_lam_a)
        return total

    return log_dphi


def _relativistic_log_dphi(beta: float, mass: float):
    a = beta / 2.0
    shift = mass ** a

    def log_dphi(v):
        v = np.asarray(v, dtype=float)
        log_inner = np.logaddexp(v, a * math.log(mass))  # log(lam + m^a)
        # phi(lam) = log(1 + inner^(1/a) - m), written as x + log1p((1-m) e^-x)
        x = log_inner / a
        log_denom = x + np.log1p((1.0 - mass) * np.exp(-x))
        return -math.log(a) + (1 / a - 1) * log_inner - log_denom

    return log_dphi


def _no_a3_subordinator(delta: float) -> SubordinatorSpec:
    """``m(t) = t^-2 (log(e + 1/t))^-2 1{t <= delta}``."""
    if not (0 < delta <= 1):
        raise ValueError("delta must lie in (0, 1]")
    ld = math.log(delta)

    def log_density(u):
        u = np.asarray(u, dtype=float)
        with np.errstate(over="ignore"):
            val = -2.0 * u - 2.0 * np.log(np.logaddexp(1.0, -u))
        return np.where(u <= ld, val, -np.inf)

    return SubordinatorSpec(
        drift=0.0,
        log_density=log_density,
        name=f"no-a3(delta={delta:g})",
        breakpoints=(delta,),
        params={"delta": delta},
    )


# ---------------------------------------------------------------------------
# registry


def _stable(d: int, alpha: float = 1.0) -> ProcessSpec:
    if not (0 < alpha < 2):
        raise ValueError(f"α ∉ (0,2): got alpha={alpha}; the Levy-Khintchine condition fails")
    return ProcessSpec(
        name="stable", dim=d, params={"alpha": alpha},
        kernel_factory=lambda: power_kernel(d, alpha), simulable=True,
    )


def _geometric_stable(d: int, beta: float = 2.0) -> ProcessSpec:
    if not (0 < beta <= 2):
        raise ValueError(f"beta must lie in (0, 2], got {beta}")
    sub = gamma_subordinator() if beta == 2 else _mittag_leffler_subordinator(beta / 2)
    return ProcessSpec(name="geometric-stable", dim=d, params={"beta": beta},
                       subordinator=sub, simulable=True)


def _iterated_gs(d: int, beta: float = 2.0, n: int = 2) -> ProcessSpec:
    if not (0 < beta <= 2):
        raise ValueError(f"beta must lie in (0, 2], got {beta}")
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    return ProcessSpec(
        name="iterated-gs", dim=d, params={"beta": beta, "n": n},
        kernel_factory=lambda: _model_kernel(d, _iterated_log_dphi(beta, n),
                                             f"iterated-gs(beta={beta:g}, n={n})",
                                             {"beta": beta, "n": n}),
        simulable=False,
        notes="model kernel up to a constant; continuation past r=1 is not authoritative",
    )


def _relativistic_gs(d: int, beta: float = 2.0, m: float = 1.0) -> ProcessSpec:
    if not (0 < beta <= 2):
        raise ValueError(f"beta must lie in (0, 2], got {beta}")
    if not m > 0:
        raise ValueError("m must be positive")
    return ProcessSpec(
        name="relativistic-gs", dim=d, params={"beta": beta, "m": m},
        kernel_factory=lambda: _model_kernel(d, _relativistic_log_dphi(beta, m),
                                             f"relativistic-gs(beta={beta:g}, m={m:g})",
                                             {"beta": beta, "m": m}),
        simulable=False,
        notes="model kernel up to a constant; continuation past r=1 is not authoritative",
    )


def _example_no_a3(d: int, delta: float = 0.1) -> ProcessSpec:
    return ProcessSpec(name="example-no-a3", dim=d, params={"delta": delta},
                       subordinator=_no_a3_subordinator(delta), simulable=True)


def _counterexample(d: int, n_max: int = 6) -> ProcessSpec:
    if int(n_max) != n_max or not (1 <= n_max <= 8):
        raise ValueError("n_max must be an integer in [1, 8]")
    return ProcessSpec(name="counterexample", dim=d, params={"n_max": int(n_max)},
                       subordinator=counterexample_subordinator(int(n_max)), simulable=True)


@dataclass(frozen=True)
class _Entry:
    factory: Callable[..., ProcessSpec]
    schema: dict
    summary: str


BUILTINS: dict[str, _Entry] = {
    "stable": _Entry(_stable, {"alpha": "float in (0,2), default 1"},
                     "j(r) = r^(-d-alpha)"),
    "geometric-stable": _Entry(_geometric_stable, {"beta": "float in (0,2], default 2"},
                               "subordinator with phi = log(1 + lam^(beta/2)); beta=2 is Gamma"),
    "iterated-gs": _Entry(_iterated_gs, {"beta": "float in (0,2], default 2", "n": "int >= 1, default 2"},
                          "model kernel from the n-fold composition of phi_1"),
    "relativistic-gs": _Entry(_relativistic_gs, {"beta": "float in (0,2], default 2", "m": "float > 0, default 1"},
                              "model kernel from phi = log(1 + (lam + m^(beta/2))^(2/beta) - m)"),
    "example-no-a3": _Entry(_example_no_a3, {"delta": "float in (0,1], default 0.1"},
                            "subordinator t^-2 log(e+1/t)^-2 on (0, delta]"),
    "counterexample": _Entry(_counterexample, {"n_max": "int in [1,8], default 6"},
                             "subordinator (2/3) sum 2^(3n^2) min{1, (2^(2n^2) t)^-3}"),
}


def builtin(name: str, params: Optional[dict] = None, d: int = 1) -> ProcessSpec:
    """Instantiate a built-in family by name."""
    if name not in BUILTINS:
        raise KeyError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}")
    if int(d) != d or d < 1:
        raise ValueError("dimension must be a positive integer")
    entry = BUILTINS[name]
    params = dict(params or {})
    unknown = set(params) - set(entry.schema)
    if unknown:
        raise ValueError(f"{name}: unknown parameter(s) {sorted(unknown)}")
    return entry.factory(int(d), **params)


def describe_builtins() -> list[str]:
    lines = []
    for name, entry in BUILTINS.items():
        schema = ", ".join(f"{k}: {v}" for k, v in entry.schema.items())
        lines.append(f"{name}({schema}) -- {entry.summary}")
    return lines
