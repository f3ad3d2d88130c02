"""Unit conversion helpers.

Internally everything runs in nanoseconds, bytes and bytes-per-nanosecond.
Config files and CLI flags speak Gbps, microseconds and kilobytes, and are
converted exactly once at load time.  100 Gbps == 12.5 bytes/ns.
"""

# 1 Gbps = 1e9 bit/s = 0.125e9 byte/s = 0.125 byte/ns
BYTES_PER_NS_PER_GBPS = 0.125
NS_PER_US = 1000.0
BYTES_PER_KB = 1000.0


def gbps(value: float) -> float:
    """Gigabits per second -> bytes per nanosecond."""
    return value * BYTES_PER_NS_PER_GBPS


def to_gbps(rate_bytes_per_ns: float) -> float:
    return rate_bytes_per_ns / BYTES_PER_NS_PER_GBPS


def us(value: float) -> float:
    """Microseconds -> nanoseconds."""
    return value * NS_PER_US


def to_us(time_ns: float) -> float:
    return time_ns / NS_PER_US


def kb(value: float) -> float:
    """Kilobytes (decimal) -> bytes."""
    return value * BYTES_PER_KB
