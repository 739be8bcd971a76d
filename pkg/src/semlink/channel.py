"""Per-link SNR states and AWGN corruption of transmitted vectors.

Index convention for both SNR matrices: entry [src, dst] is the SNR in dB of
a transmission from device ``src`` to device ``dst``. Query and data links
are drawn independently (they need not match or be symmetric). Diagonal
entries are pinned to gamma_max: a device never sends to itself over the
air, but the matching stage still needs an SNR value for the self pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNIFORM = "uniform"
EXTREME = "extreme"


@dataclass(frozen=True)
class SnrScenario:
    """Link-quality regime: continuous uniform or two-point extreme."""

    kind: str
    gamma_min_db: float = -10.0
    gamma_max_db: float = 10.0

    def __post_init__(self):
        if self.kind not in (UNIFORM, EXTREME):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not self.gamma_min_db < self.gamma_max_db:
            raise ValueError("gamma_min_db must be below gamma_max_db")


@dataclass
class LinkState:
    """SNR matrices for one inference round, dB, [src, dst] indexed."""

    n_devices: int
    gamma_q_db: np.ndarray
    gamma_d_db: np.ndarray


def sample_link_state(scenario: SnrScenario, n: int, rng: np.random.Generator) -> LinkState:
    """Draw fresh query/data SNR matrices for n devices."""
    if n < 2:
        raise ValueError(f"need at least 2 devices, got {n}")
    lo, hi = scenario.gamma_min_db, scenario.gamma_max_db

    def draw() -> np.ndarray:
        if scenario.kind == UNIFORM:
            m = rng.uniform(lo, hi, size=(n, n))
        else:
            m = rng.choice([lo, hi], size=(n, n))
        np.fill_diagonal(m, hi)
        return m

    return LinkState(n, draw(), draw())


def awgn_transmit(v: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """v plus zero-mean Gaussian noise at sigma^2 = mean(v^2) / 10^(snr_db/10).

    snr_db = +inf means a noiseless link; an all-zero message passes
    unchanged (zero measured power).
    """
    v = np.asarray(v, dtype=np.float64)
    if math.isinf(snr_db) and snr_db > 0:
        return v.copy()
    power = float(np.mean(v * v))
    if power == 0.0:
        return v.copy()
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    return v + sigma * rng.standard_normal(v.shape)


def transmit_query(mu_i: np.ndarray, link: LinkState, i: int, j: int,
                   noisy: bool, rng: np.random.Generator) -> np.ndarray:
    """Query multicast leg i -> j; identity when the reliable-query arm is on."""
    if i == j:
        raise ValueError("self-queries never transit the channel")
    if not noisy:
        return np.asarray(mu_i, dtype=np.float64).copy()
    return awgn_transmit(mu_i, float(link.gamma_q_db[i, j]), rng)


def transmit_data(o_j: np.ndarray, link: LinkState, j: int, i: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Feature unicast leg j -> i."""
    if i == j:
        raise ValueError("self-features never transit the channel")
    return awgn_transmit(o_j, float(link.gamma_d_db[j, i]), rng)
