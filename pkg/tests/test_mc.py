import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ibp import exact, mc
from ibp.core import DomainError, Kind, ProcessSpec, ResourceError


def _scripted(values):
    return iter(values)


def test_kernel_channel_choice_is_rate_proportional():
    # draws alternate: waiting time, channel.  From m = 1 the first event is at
    # -ln(0.5)/2 = 0.35; the next waiting draw puts the second event past t = 0.5.
    assert mc._one_type(Kind.CRITICAL, 0.0, [0.5], _scripted([0.5, 0.49, 0.999999])) == [2]
    assert mc._one_type(Kind.CRITICAL, 0.0, [0.5], _scripted([0.5, 0.51])) == [0]


def test_noext_single_cell_cannot_die():
    # at m = 1 the total rate is 1 and birth is the only channel
    assert mc._one_type(Kind.NOEXT, 0.0, [1.0], _scripted([0.5, 0.999, 0.999999])) == [2]


def test_first_event_split():
    n = 200_000
    births = 0
    streams = mc._Streams(11)
    for i in range(n):
        draw = mc._uniforms(streams.at(i))
        next(draw)  # waiting time
        births += next(draw) * 2 < 1
    sigma = math.sqrt(0.25 / n)
    assert abs(births / n - 0.5) < 4 * sigma


def test_twotype_silent_source_stays_empty():
    states = mc.simulate_one(ProcessSpec.twotype(0.25, 1.0, 0.0), 5.0, [1.0, 5.0], mc.stream(0, 0))
    assert all(s.m == 0 and s.n == 0 for s in states)


def test_simulate_one_validates_times():
    spec = ProcessSpec.critical()
    with pytest.raises(DomainError):
        mc.simulate_one(spec, 1.0, [0.5, 0.5], mc.stream(0, 0))
    with pytest.raises(DomainError):
        mc.simulate_one(spec, 1.0, [2.0], mc.stream(0, 0))


def test_immigration_reports_stem_cell():
    states = mc.simulate_one(ProcessSpec.immigration(1.0), 3.0, [0.0, 3.0], mc.stream(5, 2))
    assert states[0].m == 1 and states[0].stem_active
    assert all(s.m >= 1 for s in states)


def test_ensemble_uses_per_trajectory_streams():
    spec = ProcessSpec.noext()
    times = [0.5, 2.0]
    stats = mc.run_ensemble(spec, 2.0, times, 300, base_seed=42)
    tallies = [Counter() for _ in times]
    for i in range(300):
        for j, s in enumerate(mc.simulate_one(spec, 2.0, times, mc.stream(42, i))):
            tallies[j][s.m] += 1
    for j in range(len(times)):
        row = stats.histograms[j]
        assert {m: int(row[m]) for m in range(len(row) - 1) if row[m]} == dict(tallies[j])


def test_critical_large_ensemble():
    N = 1_000_000
    stats = mc.run_ensemble(ProcessSpec.critical(), 3.0, [1.0, 3.0], N, base_seed=2024)
    sigma = math.sqrt(0.25 * 0.75 / N)
    assert abs(stats.histograms[0, 1] / N - 0.25) < 4 * sigma
    assert abs(stats.histograms[1, 0] / N - 0.75) < 4 * sigma
    for j in range(2):
        ms = stats.moments(j)
        assert abs(ms[1] - 1) < 4 * ms.stderr[1]
        assert stats.histograms[j].sum() == N


def test_immigration_mean_mortal_count():
    N = 200_000
    beta, t = 1.0, 2.0
    stats = mc.run_ensemble(ProcessSpec.immigration(beta), t, [t], N, base_seed=9)
    ms = stats.moments(0)
    assert abs((ms[1] - 1) - beta * t) < 4 * ms.stderr[1]


def test_stderr_is_sample_std_over_sqrt_n():
    spec = ProcessSpec.immigration(0.5)
    N = 500
    stats = mc.run_ensemble(spec, 3.0, [3.0], N, base_seed=3)
    xs = np.array([mc.simulate_one(spec, 3.0, [3.0], mc.stream(3, i))[0].m for i in range(N)], dtype=float)
    ms = stats.moments(0)
    for k in (1, 2, 3):
        assert ms[k] == pytest.approx(np.mean(xs**k), rel=1e-12)
        assert ms.stderr[k] == pytest.approx(np.std(xs**k, ddof=1) / math.sqrt(N), rel=1e-10)


def test_overflow_bin_keeps_every_trajectory():
    stats = mc.run_ensemble(ProcessSpec.noext(), 20.0, [20.0], 2000, base_seed=1, bin_cap=4)
    assert stats.histograms.shape[1] == 6
    assert stats.overflow(0) > 0
    assert stats.histograms[0].sum() == 2000
    snap = stats.to_snapshot(0)
    assert snap.tail_mass == pytest.approx(stats.overflow(0) / 2000)
    assert snap.probs.sum() + snap.tail_mass == pytest.approx(1.0)


def test_twotype_histogram_layout():
    stats = mc.run_ensemble(ProcessSpec.twotype(0.25, 1.0, 0.5), 2.0, [2.0], 3000, base_seed=4, bin_cap=16)
    snap = stats.to_snapshot(0)
    assert snap.probs.shape == (17, 17)
    assert snap.origin == 0
    assert snap.meta["counts"].sum() + stats.overflow(0) == 3000


def test_resource_cap():
    with pytest.raises(ResourceError):
        mc.run_ensemble(ProcessSpec.twotype(0.25, 1.0, 0.5), 1.0, [1.0], 10, base_seed=0, bin_cap=20_000)


def test_determinism_across_jobs_and_runs():
    spec = ProcessSpec.immigration(0.7)
    args = (spec, 2.0, [0.5, 2.0], 9000, 123)
    a = mc.run_ensemble(*args, jobs=1).to_json()
    b = mc.run_ensemble(*args, jobs=1).to_json()
    c = mc.run_ensemble(*args, jobs=3).to_json()
    assert a == b == c


def test_json_fields():
    import json

    stats = mc.run_ensemble(ProcessSpec.critical(), 1.0, [1.0], 100, base_seed=5)
    doc = json.loads(stats.to_json())
    assert set(doc) >= {"spec", "base_seed", "trajectories", "sample_times", "histograms", "moments"}
    assert doc["moments"][0][0]["k"] == 1
    assert {"value", "stderr"} <= set(doc["moments"][0][0])


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=2**63), st.floats(min_value=0.1, max_value=6.0))
def test_noext_never_reaches_zero(seed, t):
    stats = mc.run_ensemble(ProcessSpec.noext(), t, [t / 2, t], 200, base_seed=seed)
    assert not stats.histograms[:, 0].any()


def test_critical_distribution_against_closed_form():
    N = 100_000
    stats = mc.run_ensemble(ProcessSpec.critical(), 2.0, [2.0], N, base_seed=77)
    counts = stats.histograms[0, 1:30]
    expected = N * exact.critical_pm(np.arange(1, 30), 2.0)
    ok = expected >= 10
    z = (counts[ok] - expected[ok]) / np.sqrt(expected[ok] * (1 - expected[ok] / N))
    assert np.all(np.abs(z) < 4)


def test_empty_system_probability_fixes_exponent_sign():
    # the two readings of the exponential prefactor differ by a factor e^(2 b (1 - e^-t))
    N, t, beta = 200_000, 2.0, 0.25
    stats = mc.run_ensemble(ProcessSpec.twotype(0.25, 1.0, beta), t, [t], N, base_seed=20260101)
    p_hat = stats.histograms[0, 0] / N
    plus = exact.twotype_special_p00(t, beta)
    minus = plus * math.exp(-2 * beta * (1 - math.exp(-t)))
    sigma = math.sqrt(p_hat * (1 - p_hat) / N)
    assert abs(p_hat - plus) < 4 * sigma
    assert abs(p_hat - minus) > 50 * sigma
