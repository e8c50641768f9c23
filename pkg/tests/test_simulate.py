import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ehi.catalog import ProcessSpec, builtin
from ehi.kernels import (
    log_corrected_kernel,
    power_kernel,
    subordinator,
    tail_lambda,
    truncated,
    truncated_moment,
)
from ehi.simulate import (
    SMALL_SURROGATE,
    SimConfig,
    Trajectory,
    build_model,
    default_step,
    exit_batch,
    exit_event,
    mixture_model,
    quadratic_variation,
    sample_path,
    small_flat_split,
    small_large_split,
    terminal_batch,
)

Z4 = 4.0


def truncated_stable(d=1, alpha=1.0):
    return ProcessSpec("truncated-stable", d, kernel_factory=lambda: truncated(power_kernel(d, alpha), 1.0))


def stable(alpha=1.0, d=1):
    return builtin("stable", {"alpha": alpha}, d)


def bernoulli_se(p, n):
    return math.sqrt(max(p * (1 - p), 1e-12) / n)


# -- splits -----------------------------------------------------------------

def test_small_large_stable():
    split = small_large_split(power_kernel(1, 1.0), 1.0)
    assert split.big_rate == pytest.approx(2.0, rel=1e-10)
    assert split.m2_small == pytest.approx(2.0, rel=1e-10)
    r = split.sample_big_radii(np.random.default_rng(1), 20000)
    assert r.min() > 1.0
    # P(|dX| > y) = 1/y
    assert stats.kstest(r, lambda y: 1 - 1 / y).pvalue > 1e-3


def test_small_large_identity():
    k = power_kernel(1, 1.0)
    split = small_large_split(k, 1.0)
    r = np.array([0.5, 1.0, 2.0])
    assert np.array_equal(split.small_density(r) + split.big_density(r), k.density(r))


def test_small_large_no_big_jumps():
    with pytest.raises(ValueError, match="no big jumps"):
        small_large_split(truncated(power_kernel(1, 1.0), 1.0), 2.0)


def test_small_flat_stable():
    k = power_kernel(1, 1.0)
    split = small_flat_split(k, 1.0)
    assert split.big_rate == pytest.approx(3.0, rel=1e-10)
    assert float(split.big_density(0.1) / split.big_density(0.9)) == 1.0
    ratio = split.m2_small / truncated_moment(k, 1.0)
    assert 0.5 <= ratio <= 1.0
    r = np.array([0.1, 0.5, 1.0, 2.0])
    assert split.small_density(r) + split.big_density(r) == pytest.approx(k.density(r), rel=1e-14)


def test_small_flat_sampler_matches_density():
    split = small_flat_split(power_kernel(1, 1.0), 1.0)
    r = split.sample_big_radii(np.random.default_rng(2), 60000)
    # one third of the big rate is the flat part on (0, 1]
    p = float(np.mean(r <= 1.0))
    assert abs(p - 1 / 3) < Z4 * bernoulli_se(1 / 3, r.size)
    assert stats.kstest(r[r <= 1.0], "uniform").pvalue > 1e-3


def test_small_flat_degenerate():
    with pytest.raises(ValueError, match="degenerate"):
        small_flat_split(truncated(power_kernel(1, 1.0), 1.0), 2.0)


@settings(max_examples=12, deadline=None)
@given(alpha=st.floats(0.2, 1.8), d=st.integers(1, 3), r0=st.floats(1e-3, 1e3),
       r=st.floats(1e-4, 1e4))
def test_split_identity_property(alpha, d, r0, r):
    k = power_kernel(d, alpha)
    j = float(k.density(r))
    sl = small_large_split(k, r0)
    assert float(sl.small_density(r) + sl.big_density(r)) == j
    sf = small_flat_split(k, r0)
    assert float(sf.small_density(r) + sf.big_density(r)) == pytest.approx(j, rel=1e-12)
    lam = tail_lambda(k, r0)
    assert lam <= sf.big_rate
    # flat part j(r0)/2 |B(0, r0)| equals lambda(r0) alpha / (2d) for a stable kernel
    assert sf.big_rate == pytest.approx(lam * (1 + alpha / (2 * d)), rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(alpha=st.floats(0.2, 1.8), beta=st.floats(-1.0, 1.0), r0=st.floats(1e-4, 1e-2))
def test_flat_second_moment_comparable(alpha, beta, r0):
    k = log_corrected_kernel(1, alpha, beta, cutoff=0.05)
    sf = small_flat_split(k, r0)
    m2 = truncated_moment(k, r0)
    assert 0.5 * m2 <= sf.m2_small <= m2


# -- sample paths -----------------------------------------------------------

def test_default_step_bias_rule():
    h = default_step(0.02, 1.0)
    assert 0.02 * h == pytest.approx(1e-4)
    assert default_step(0.0, 1.0) == math.inf


def test_trajectory_invariants_direct_kernel():
    traj = sample_path(stable(), SimConfig(cutoff=0.1, step=0.01, horizon=2.0, seed=3), "direct_kernel")
    assert np.all(np.diff(traj.times) > 0)
    assert SMALL_SURROGATE in traj.tags
    big = traj.big_jump_times()
    assert big.size == sum(t != SMALL_SURROGATE for t in traj.tags)
    assert np.allclose(traj.position(2.0), traj.displacements.sum(axis=0))


def test_subordinator_path_is_monotone():
    spec = builtin("geometric-stable", {"beta": 2})
    traj = sample_path(spec, SimConfig(cutoff=1e-4, horizon=5.0, seed=4), "subordinator")
    assert np.all(traj.displacements > 1e-4)
    assert traj.drift > 0
    s = [traj.position(t)[0] for t in np.linspace(0, 5, 50)]
    assert np.all(np.diff(s) >= 0)


def test_pure_drift_subordinator():
    sub = subordinator(lambda u: np.full(np.shape(u), -np.inf), drift=1.0)
    spec = ProcessSpec("drift", 1, subordinator=sub)
    traj = sample_path(spec, SimConfig(horizon=3.0), "subordinator")
    assert traj.times.size == 0
    assert traj.position(1.7)[0] == pytest.approx(1.7, abs=1e-15)
    rec = exit_event(spec, SimConfig(horizon=10.0), 2.5, mode="subordinator")
    assert rec.tau == pytest.approx(2.5, abs=1e-15)
    assert not rec.censored


def test_gamma_subordinator_mean():
    spec = builtin("geometric-stable", {"beta": 2})
    batch = terminal_batch(spec, SimConfig(cutoff=1e-6, seed=5), 100000, mode="subordinator")
    s = batch.positions[:, 0]
    assert abs(s.mean() - 1.0) < Z4 * s.std(ddof=1) / math.sqrt(s.size)


def test_big_jump_count_poisson():
    batch = terminal_batch(stable(), SimConfig(cutoff=1.0, seed=6), 100000, mode="direct_kernel")
    c = batch.jump_counts
    assert abs(c.mean() - 2.0) < Z4 * math.sqrt(2.0 / c.size)
    assert c.var() == pytest.approx(2.0, rel=0.05)


def test_big_jump_interarrivals_exponential():
    cfg = SimConfig(cutoff=1.0, horizon=3000.0, seed=7, gaussian_surrogate=False)
    traj = sample_path(stable(), cfg, "direct_kernel")
    gaps = np.diff(np.concatenate([[0.0], traj.big_jump_times()]))
    assert stats.kstest(gaps, "expon", args=(0, 1 / 2.0)).pvalue > 1e-3


def test_size_clock_is_exponential():
    # the first jump above s arrives at rate sum_m H_m P(A_m Y > s)
    rates, scales = [16.0, 512.0], [2.0 ** -8, 2.0 ** -18]
    s = 2.0 ** -13
    model = mixture_model(rates, scales, 1)
    b = exit_batch(None, SimConfig(cutoff=1, step=1, horizon=math.inf, seed=8), 20000, 1e9,
                   size_clock=s, model=model)
    rate = sum(h * (1.0 / (3 * (s / a) ** 2) if s / a > 1 else 1 - 2 * s / (3 * a))
               for h, a in zip(rates, scales))
    assert not b.exited.any()
    assert stats.kstest(b.clock, "expon", args=(0, 1 / rate)).pvalue > 1e-3


# -- second moments and quadratic variation --------------------------------

@pytest.mark.parametrize("d,alpha,cutoff", [(1, 1.0, 0.01), (2, 1.5, 0.1), (3, 0.5, 0.01)])
def test_variance_law(d, alpha, cutoff):
    spec = truncated_stable(d, alpha)
    batch = terminal_batch(spec, SimConfig(cutoff=cutoff, seed=9), 100000, mode="direct_kernel")
    x2 = np.sum(batch.positions ** 2, axis=1)
    m2 = truncated_moment(spec.kernel, 1.0)
    assert abs(x2.mean() - m2) < Z4 * x2.std(ddof=1) / math.sqrt(x2.size)


def _trajectory(times, disp, tags):
    disp = np.asarray(disp, dtype=float).reshape(len(times), -1 if len(times) else 1)
    return Trajectory(times=np.asarray(times, dtype=float), displacements=disp, tags=tuple(tags),
                      start=np.zeros(disp.shape[1] if len(times) else 1), horizon=1.0, seed=0, replica=0)


def test_quadratic_variation_trivial():
    assert quadratic_variation(_trajectory([0.5], [3.0], ["big"]), 1.0) == 9.0
    assert quadratic_variation(_trajectory([], np.zeros((0, 1)), []), 1.0) == 0.0
    mixed = _trajectory([0.2, 0.5, 0.9], [0.1, 3.0, 4.0], [SMALL_SURROGATE, "big", "big"])
    assert quadratic_variation(mixed, 0.6) == 9.0
    with pytest.raises(ValueError):
        quadratic_variation(mixed, 2.0)


def test_quadratic_variation_matches_batch():
    cfg = SimConfig(cutoff=0.1, step=0.05, horizon=1.0, seed=10)
    traj = sample_path(truncated_stable(), cfg, "direct_kernel")
    big = [t != SMALL_SURROGATE for t in traj.tags]
    assert quadratic_variation(traj, 1.0) == pytest.approx(float(np.sum(traj.displacements[big] ** 2)))


def test_quadratic_variation_laplace_transform():
    spec = truncated_stable()
    batch = terminal_batch(spec, SimConfig(cutoff=0.01, seed=11), 100000, mode="direct_kernel")
    w = np.exp(-(batch.jump_qv + batch.surrogate_qv))
    exact = math.exp(-2 * float(mpmath.quad(lambda s: (1 - mpmath.exp(-s * s)) / s ** 2, [0, 1])))
    assert abs(w.mean() - exact) < Z4 * w.std(ddof=1) / math.sqrt(w.size)


# -- exits ------------------------------------------------------------------

def test_exit_sandwich_small():
    spec = truncated_stable()
    cfg = SimConfig(cutoff=0.01, step=1e-3, horizon=50, seed=12)
    b = exit_batch(spec, cfg, 20000, 2.0, clock_rate=1.0, run_to_clock=True, mode="direct_kernel")
    assert not np.isnan(b.at_clock).any()
    p_exit = float(b.exited_before_clock(strict=False).mean())
    p_x = float((np.linalg.norm(b.at_clock, axis=1) >= 2.0).mean())
    se = bernoulli_se(p_exit, b.n) + bernoulli_se(p_x, b.n)
    assert p_x <= p_exit + Z4 * se
    assert p_exit <= 2 * p_x + Z4 * (bernoulli_se(p_exit, b.n) + 2 * bernoulli_se(p_x, b.n))


def test_exit_before_time_dominates_terminal_tail():
    spec = stable()
    cfg = SimConfig(cutoff=0.01, step=1e-3, horizon=1.0, seed=13)
    b = exit_batch(spec, cfg, 20000, 1.0, mode="direct_kernel")
    x = terminal_batch(spec, cfg, 20000, mode="direct_kernel").positions[:, 0]
    p_tau = float(b.exited.mean())
    p_x = float((np.abs(x) >= 1.0).mean())
    assert p_x <= p_tau + Z4 * (bernoulli_se(p_x, 20000) + bernoulli_se(p_tau, 20000))


def test_submultiplicativity_small():
    spec = truncated_stable()
    cfg = SimConfig(cutoff=0.01, step=1e-3, horizon=math.inf, seed=14)
    n = 20000
    p = {}
    for radius in (1.0, 3.0, 5.0):
        b = exit_batch(spec, cfg, n, radius, clock_rate=1.0, mode="direct_kernel",
                       purpose=f"submult-{radius:g}")
        p[radius] = float(b.exited_before_clock().mean())
    base, se = p[1.0], bernoulli_se(p[1.0], n)
    for m, radius in ((2, 3.0), (3, 5.0)):
        # delta method for the m-th power plus the sampling error of the left side
        slack = Z4 * (bernoulli_se(p[radius], n) + m * base ** (m - 1) * se)
        assert p[radius] <= base ** m + slack


def test_expected_survival_bound():
    spec = truncated_stable()
    lam, r = 10.0, 1.0
    m2 = truncated_moment(spec.kernel, 1.0)
    bound = (1 - math.exp(-1)) * (1 - 2 * m2 / (r * r * lam))
    assert bound > 0
    b = exit_batch(spec, SimConfig(cutoff=0.01, step=1e-3, horizon=math.inf, seed=15), 20000, r,
                   start=[0.0], clock_rate=lam, mode="direct_kernel")
    survive = 1.0 - float(b.exited_before_clock().mean())
    assert survive >= bound - Z4 * bernoulli_se(survive, b.n)


def test_fast_clock_rarely_loses():
    spec = truncated_stable()
    lam = 1e6
    b = exit_batch(spec, SimConfig(cutoff=0.01, step=1e-3, horizon=math.inf, seed=16), 20000, 1.0,
                   clock_rate=lam, mode="direct_kernel")
    p = float(b.exited_before_clock().mean())
    m2 = truncated_moment(spec.kernel, 1.0)
    assert p <= 2 * m2 / lam + Z4 * bernoulli_se(p, b.n)


def test_exit_position_outside_ball():
    b = exit_batch(stable(1.0, 2), SimConfig(cutoff=0.01, step=1e-3, horizon=20, seed=17), 2000, 1.0,
                   mode="direct_kernel")
    done = b.exited
    assert np.all(np.linalg.norm(b.exit_position[done], axis=1) >= 1.0)
    assert set(np.unique(b.cause[done])) <= {1, 2}


def test_exit_event_record():
    rec = exit_event(stable(), SimConfig(cutoff=0.01, step=1e-3, horizon=100, seed=18), 1.0,
                     reference_clock=0.5, mode="direct_kernel")
    assert rec.cause in ("small_path", "big_jump", "none")
    if math.isfinite(rec.tau):
        assert abs(rec.position_at_tau[0]) >= 1.0


def test_censoring_reported():
    b = exit_batch(truncated_stable(), SimConfig(cutoff=0.01, step=1e-3, horizon=1e-3, seed=19), 100,
                   50.0, mode="direct_kernel")
    assert b.censored.all()


def test_exit_start_must_be_inside():
    with pytest.raises(ValueError):
        exit_batch(stable(), SimConfig(), 10, 1.0, start=[1.5], mode="direct_kernel")


# -- determinism ------------------------------------------------------------

def test_seeded_runs_are_reproducible():
    cfg = SimConfig(cutoff=0.05, step=1e-2, horizon=5, seed=21)
    a = exit_batch(stable(), cfg, 5000, 1.0, clock_rate=1.0, mode="direct_kernel")
    b = exit_batch(stable(), cfg, 5000, 1.0, clock_rate=1.0, mode="direct_kernel")
    assert np.array_equal(a.tau, b.tau)
    assert np.array_equal(a.clock, b.clock)
    c = exit_batch(stable(), SimConfig(cutoff=0.05, step=1e-2, horizon=5, seed=22), 5000, 1.0,
                   clock_rate=1.0, mode="direct_kernel")
    assert not np.array_equal(a.tau, c.tau)
    p1 = sample_path(stable(), cfg, "direct_kernel", replica=3)
    p2 = sample_path(stable(), cfg, "direct_kernel", replica=3)
    assert np.array_equal(p1.displacements, p2.displacements)


def test_thread_count_does_not_change_results(monkeypatch):
    cfg = SimConfig(cutoff=0.05, step=1e-2, horizon=5, seed=23)
    a = exit_batch(stable(), cfg, 10000, 1.0, clock_rate=1.0, mode="direct_kernel")
    monkeypatch.setenv("EHI_THREADS", "3")
    b = exit_batch(stable(), cfg, 10000, 1.0, clock_rate=1.0, mode="direct_kernel")
    assert np.array_equal(a.tau, b.tau)
    assert np.array_equal(a.exit_position, b.exit_position, equal_nan=True)


def test_build_model_errors():
    with pytest.raises(ValueError):
        build_model(stable(), SimConfig(), "subordinator")
    with pytest.raises(ValueError):
        build_model(stable(), SimConfig(), "teleport")
    with pytest.raises(ValueError):
        SimConfig(cutoff=0.0)
