"""Monte Carlo experiments shared by the acceptance suite and the pilot script.

Each function takes a seed and a replica count and returns plain data, so the
pilot can commit its output and the acceptance suite can replicate it.
"""

from __future__ import annotations

import math
import time

from ehi.catalog import builtin
from ehi.probe import (
    HarnackExperiment,
    counterexample_harnack,
    exit_histogram,
    harnack_ratio,
    histogram_asymmetry,
    monotone_separation,
    sandwich_probabilities,
    symmetric_bins,
)
from ehi.simulate import SimConfig

# stable alpha = 1 exit runs: jumps above the cutoff exact, the rest Gaussian
STABLE_CUTOFF, STABLE_STEP = 0.01, 1e-3
HARNACK_CUTOFF, HARNACK_STEP = 0.05, 1e-2


def poisson_kernel_band(seed: int, replicas: int) -> dict:
    """Exit histograms from B(0, 1) at x = 0.5 and x = -0.5 (independent pools)."""
    spec = builtin("stable", {"alpha": 1.0}, 1)
    bins = symmetric_bins(1.0, 3.0, 20)
    hists = [exit_histogram(spec, SimConfig(cutoff=STABLE_CUTOFF, step=STABLE_STEP, horizon=1e4, seed=s),
                            1.0, [x], bins, replicas)
             for s, x in ((seed, 0.5), (seed + 1, -0.5))]
    asym = histogram_asymmetry(*hists)
    return {"seed": seed, "replicas": replicas, "C": asym["C"], "empty_bins": asym["empty_bins"],
            "ratios": [float(v) for v in asym["ratio"]]}


def sandwich(seed: int, replicas: int, levels=(3, 4, 5)) -> dict:
    out = {"seed": seed, "replicas": replicas, "levels": {}}
    t0 = time.perf_counter()
    for n in levels:
        sw = sandwich_probabilities(None, n, replicas=replicas, seed=seed)
        out["levels"][str(n)] = {
            "clock_rate_over_H": sw.clock_rate / sw.params.H,
            "p_exit": sw.p_exit.mean,
            "p_exit_stderr": sw.p_exit.stderr,
            "p_scatter_small": sw.p_scatter_small,
            "scatter_to_exit": sw.scatter_to_exit,
        }
    out["runtime"] = time.perf_counter() - t0
    return out


def _ratio_dict(res) -> dict:
    return {"ratio": res.ratio, "stderr": res.ratio_stderr, "ci": list(res.ratio_ci)}


def harnack_separation(seed: int, replicas: int, levels=(2, 3, 4, 5)) -> dict:
    """Counterexample ratios h(0)/h(y_n) across levels, and stable alpha = 1 at the same geometry.

    The stable process is scale invariant, so R1 = 1, R2 = 5, R3 = 30 stands
    for every level's (r_n, 5 r_n, 30 r_n).
    """
    results = [counterexample_harnack(n, replicas, seed) for n in levels]
    exp = HarnackExperiment(R1=1.0, R2=5.0, R3=30.0, replicas=replicas, spec=builtin("stable", {"alpha": 1.0}, 1),
                            cfg=SimConfig(cutoff=HARNACK_CUTOFF, step=HARNACK_STEP, horizon=1e4, seed=seed))
    stable = harnack_ratio(exp)
    return {"seed": seed, "replicas": replicas,
            "levels": {str(n): _ratio_dict(r) for n, r in zip(levels, results)},
            "separation": monotone_separation(results),
            "stable": _ratio_dict(stable)}


def agree(a: float, se_a: float, b: float, se_b: float, z: float = 4.0) -> bool:
    return abs(a - b) <= z * math.hypot(se_a, se_b)
