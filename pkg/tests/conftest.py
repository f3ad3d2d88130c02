"""Shared builders for the test suite.

Most tests want the same shape of inputs: the 100G/10us network, a
bundled size distribution calibrated to some offered load, and a small
SimConfig around them.  The helpers here keep each test file focused on
what it actually asserts.
"""

from __future__ import annotations

import pytest

from slosim.bottleneck import SharedFifo
from slosim.ccmodel import dctcp_like
from slosim.engine import NetworkConfig, SimConfig
from slosim.slo import Percentile, SliDef
from slosim.units import gbps, us
from slosim.workload import (
    LogNormal,
    TrafficClassSpec,
    bundled_workload_path,
    dist_mean,
    load_cdf_file,
    mu_for_load,
)


@pytest.fixture(scope="session")
def net100():
    return NetworkConfig(capacity=gbps(100), rtt=us(10))


def workload_cdf(name: str):
    return load_cdf_file(bundled_workload_path(name))


def make_class(
    name: str = "c0",
    dist: str = "google",
    rate: float = gbps(8),
    sigma: float = 1.2,
    slis=None,
    slo=None,
    priority_rank=None,
) -> TrafficClassSpec:
    """A traffic class on a bundled workload at the given offered rate."""
    cdf = workload_cdf(dist)
    mu = mu_for_load(rate, dist_mean(cdf), sigma)
    if slis is None:
        slis = [SliDef(name="p99_all", metric=Percentile(0.99))]
    return TrafficClassSpec(
        name=name,
        flow_sizes=cdf,
        interarrivals=LogNormal(mu, sigma),
        slis=slis,
        slo=slo,
        priority_rank=priority_rank,
    )


def quick_cfg(classes, discipline=None, net=None, **kw) -> SimConfig:
    """Small, fast simulation config; dt coarsened to keep unit tests quick."""
    if net is None:
        net = NetworkConfig(capacity=gbps(100), rtt=us(10), dt=1250.0)
    kw.setdefault("num_flows", 300)
    kw.setdefault("seed", 7)
    kw.setdefault("cc", dctcp_like())
    return SimConfig(
        network=net,
        discipline=discipline if discipline is not None else SharedFifo(),
        classes=classes,
        **kw,
    )
