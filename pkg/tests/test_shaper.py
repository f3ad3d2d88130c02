"""Token-bucket shaping: hand-traced departures, envelope conformance,
bucket-size sweeps."""

import numpy as np
import pytest

from slosim.errors import ConfigError
from slosim.shaper import (
    LeakyBucketParams,
    ShaperResult,
    default_bucket_grid,
    envelope_excess,
    shape_trace,
    simulate_shaper,
    sweep_bucket_sizes,
    write_delay_cdf_csv,
    write_downstream_csv,
)
from slosim.workload import Constant, Exponential, LogNormal


def params(rate=1.0, bucket=100.0, sizes=Constant(10.0), gaps=Exponential(50.0)):
    return LeakyBucketParams(rate=rate, bucket=bucket, sizes=sizes, gaps=gaps)


def test_params_validation_and_load():
    with pytest.raises(ConfigError):
        params(rate=0.0)
    with pytest.raises(ConfigError):
        params(bucket=-5.0)
    p = params(sizes=Constant(100.0), gaps=Exponential(200.0))
    assert p.offered_load() == pytest.approx(0.5)


def test_hand_traced_departures_and_downstream():
    # r=1 B/ns, bucket 100 B, starts full
    p = params(rate=1.0, bucket=100.0)
    res = shape_trace(p, arrivals=np.array([0.0, 10.0, 20.0]),
                      sizes=np.array([50.0, 80.0, 30.0]))
    # msg 0: 100 tokens cover 50 -> departs on arrival, 50 left
    # msg 1: 50 + 10 refilled = 60 of 80 -> departs at 10 + 20/1 = 30
    # msg 2: waits for msg 1 (FIFO), bucket empty -> departs at 30 + 30
    np.testing.assert_allclose(res.departures, [0.0, 30.0, 60.0])
    np.testing.assert_allclose(res.host_delays, [0.0, 20.0, 40.0])
    # downstream FIFO at the same rate, observed before joining:
    # msg 1 sees 50 - 1*(30-0) = 20; msg 2 sees 130 - 1*(60-30) - 30 = 70
    np.testing.assert_allclose(res.downstream_seen, [0.0, 20.0, 70.0])


def test_bucket_never_lends_more_than_capacity():
    # a message bigger than the bucket always pays (size - bucket) / rate
    p = params(rate=2.0, bucket=40.0)
    res = shape_trace(p, arrivals=np.array([1000.0]), sizes=np.array([100.0]))
    np.testing.assert_allclose(res.departures, [1030.0])
    np.testing.assert_allclose(res.host_delays, [30.0])


def test_output_conforms_to_the_envelope_for_small_messages():
    p = params(rate=1.0, bucket=64.0, sizes=Constant(16.0), gaps=Exponential(20.0))
    rng = np.random.default_rng(4)
    res = simulate_shaper(p, 5000, rng)
    assert res.stable
    assert envelope_excess(res) <= 1e-6


def test_oversized_message_breaks_the_envelope_by_its_excess():
    p = params(rate=1.0, bucket=50.0)
    res = shape_trace(p, arrivals=np.array([0.0]), sizes=np.array([100.0]))
    # the whole message lands at one instant; 50 bytes exceed the bucket
    assert envelope_excess(res) == pytest.approx(50.0)


def test_unstable_offered_load_is_flagged():
    p = params(rate=1.0, sizes=Constant(100.0), gaps=Exponential(50.0))  # load 2
    res = simulate_shaper(p, 100, np.random.default_rng(1))
    assert not res.stable
    assert len(res.departures) == 0
    assert envelope_excess(res) == 0.0


def test_simulate_shaper_is_deterministic():
    p = params(bucket=40.0)
    a = simulate_shaper(p, 2000, np.random.default_rng(9))
    b = simulate_shaper(p, 2000, np.random.default_rng(9))
    np.testing.assert_array_equal(a.departures, b.departures)
    np.testing.assert_array_equal(a.downstream_seen, b.downstream_seen)


def test_sweep_shares_one_arrival_trace():
    results = sweep_bucket_sizes(rate=1.0, buckets=[20.0, 80.0],
                                 sizes=Constant(10.0), gaps=Exponential(50.0),
                                 count=3000, seed=11)
    assert [r.params.bucket for r in results] == [20.0, 80.0]
    np.testing.assert_array_equal(results[0].arrivals, results[1].arrivals)
    np.testing.assert_array_equal(results[0].sizes, results[1].sizes)
    # a bigger bucket can only release messages earlier
    assert np.all(results[1].departures <= results[0].departures + 1e-9)


def test_bigger_buckets_trade_host_delay_for_downstream_backlog():
    sizes = Constant(16_000.0)
    gaps = LogNormal(mu=np.log(16_000.0 / 0.95) - 1.125, sigma=1.5)  # load 0.95
    grid = default_bucket_grid(sizes)
    results = sweep_bucket_sizes(rate=1.0, buckets=grid, sizes=sizes, gaps=gaps,
                                 count=20_000, seed=11)
    host_p99 = [np.quantile(r.host_delays, 0.99) for r in results]
    down_p99 = [np.quantile(r.downstream_seen, 0.99) for r in results]
    assert all(b <= a + 1e-9 for a, b in zip(host_p99, host_p99[1:]))
    assert all(b >= a - 1e-9 for a, b in zip(down_p99, down_p99[1:]))


def test_default_bucket_grid_multiples():
    grid = default_bucket_grid(Constant(1000.0))
    assert grid == [2000.0, 4000.0, 8000.0, 16_000.0, 32_000.0, 64_000.0]


def test_csv_writers(tmp_path):
    results = sweep_bucket_sizes(rate=1.0, buckets=[20.0, 80.0],
                                 sizes=Constant(10.0), gaps=Exponential(50.0),
                                 count=500, seed=3)
    d = tmp_path / "delay.csv"
    s = tmp_path / "down.csv"
    write_delay_cdf_csv(str(d), results)
    write_downstream_csv(str(s), results)
    dl = d.read_text().splitlines()
    assert dl[0] == "bucket_bytes,percentile,host_delay_ns"
    assert len(dl) == 1 + 2 * 5  # two buckets, five default percentiles
    assert s.read_text().splitlines()[0] == "bucket_bytes,percentile,downstream_bytes"
