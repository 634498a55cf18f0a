"""Synthetic network load that creates a congestion-dependent mining floor.

The model keeps the pool at a target fraction of the "normal" unconfirmed
count with two ingredient streams:

* a one-shot *sediment* of very-low-fee transactions that pads the pool to the
  target congestion level and is never attractive to miners, and
* a per-block-interval *market batch* sized to fill block capacity exactly
  (leaving one inscription-sized gap), whose fee rates ride a slowly wandering
  AR(1) floor.

A foreign transaction is mined promptly when its fee rate beats the current
floor, and stays pinned while the floor stays above it: each block is packed
with market transactions that outbid it, and the leftover capacity gap is too
small for anything but a small inscription transaction.  Raising congestion
raises the floor scale, which is what makes low-fee pinning easier under load.

Everything is driven by named, seed-derived RNG streams, so two runs with the
same seed produce identical pools, and runs that differ only in congestion
level share the same floor path up to a monotone scale factor.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass

from .chain import Transaction, TxInput, TxOutput, make_txid

MARKET_ADDRESS = "mkt"
DUST = 546


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def stream(seed: int, label: str) -> random.Random:
    return random.Random(derive_seed(seed, label))


@dataclass(frozen=True, slots=True)
class CongestionProfile:
    """Background load shape for one congestion level."""

    target_level: float
    seed: int
    floor_base: float  # stationary scale of the mining floor, sat/vB
    floor_lo: float  # hard clamps on the floor
    floor_cap: float
    rho: float = 0.9  # AR(1) persistence per block
    sigma: float = 0.22  # AR(1) innovation std-dev
    spread: float = 1.15  # per-tx rate multiplier in [1, spread]
    tx_vsize: int = 400
    sediment_rate_hi: int = 5

    def __post_init__(self) -> None:
        if not 0.0 <= self.target_level:
            raise ValueError("target_level must be >= 0")
        if self.floor_lo > self.floor_cap:
            raise ValueError("floor_lo above floor_cap")

    # Default mapping from the sweep's congestion levels to floor scales,
    # anchored so a 100 sat/vB transaction sits inside the pinning band at
    # the 0.75 level while 500 sat/vB always clears the whole market.
    ANCHOR_LEVEL = 0.75
    ANCHOR_SCALE = 210.0
    SCALE_EXPONENT = 1.7
    HARD_CAP = 430.0

    @classmethod
    def for_level(cls, level: float, seed: int) -> CongestionProfile:
        if level <= 0:
            return cls(0.0, seed, 0.0, 0.0, 0.0)
        scale = cls.ANCHOR_SCALE * (level / cls.ANCHOR_LEVEL) ** cls.SCALE_EXPONENT
        return cls(
            target_level=level,
            seed=seed,
            floor_base=scale,
            floor_lo=max(6.0, scale * 0.15),
            floor_cap=min(scale * math.e, cls.HARD_CAP),
        )

    @classmethod
    def for_band(cls, f_min: float, f_sf: float, level: float, seed: int) -> CongestionProfile:
        """Profile whose market sits strictly between f_sf and 2*f_sf.

        Fees inside (f_min, f_sf) are then pinned for as long as the load
        runs, while anything at or above 2*f_sf clears immediately.
        """
        return cls(
            target_level=level,
            seed=seed,
            floor_base=1.30 * f_sf,
            floor_lo=1.15 * f_sf,
            floor_cap=1.55 * f_sf,
            sigma=0.10,
            spread=1.15,
        )


class BackgroundLoad:
    """Generates sediment and per-interval market batches for a simulation."""

    def __init__(self, profile: CongestionProfile, normal_count: int, block_capacity: int):
        self.profile = profile
        self.batch_size = block_capacity // profile.tx_vsize if profile.target_level else 0
        target_count = round(profile.target_level * normal_count)
        self.flight = min(self.batch_size, target_count)
        self.sediment_count = max(0, target_count - self.flight)
        self._rng_floor = stream(profile.seed, "floor")
        self._rng_rates = stream(profile.seed, "rates")
        self._rng_times = stream(profile.seed, "times")
        self._rng_sediment = stream(profile.seed, "sediment")
        self._counter = 0
        sigma_stat = profile.sigma / math.sqrt(1.0 - profile.rho**2)
        self._g = self._rng_floor.gauss(0.0, sigma_stat)
        self.floor = 0.0
        if profile.target_level:
            self._update_floor()

    def _update_floor(self) -> None:
        p = self.profile
        self.floor = min(max(p.floor_base * math.exp(self._g), p.floor_lo), p.floor_cap)

    def advance_floor(self) -> float:
        p = self.profile
        self._g = p.rho * self._g + self._rng_floor.gauss(0.0, p.sigma)
        self._update_floor()
        return self.floor

    def _market_tx(self, grant, fee: int, vsize: int) -> Transaction:
        inputs = (TxInput(grant.serial),)
        outputs = (TxOutput(DUST, MARKET_ADDRESS),)
        return Transaction(
            txid=make_txid(inputs, outputs, vsize, tag=f"bg{self._counter}"),
            inputs=inputs,
            outputs=outputs,
            vsize=vsize,
        )

    def sediment(self, grant_fn) -> list[Transaction]:
        """One-shot low-fee padding; rates far below any realistic foreground."""
        txs = []
        vsize = self.profile.tx_vsize
        for _ in range(self.sediment_count):
            rate = self._rng_sediment.randint(1, self.profile.sediment_rate_hi)
            fee = rate * vsize
            self._counter += 1
            grant = grant_fn(MARKET_ADDRESS, fee + DUST)
            txs.append(self._market_tx(grant, fee, vsize))
        return txs

    def market_batch(self, grant_fn, start: float, interval: float) -> list[tuple[float, Transaction]]:
        """Fee-bearing arrivals for one block interval, floor advanced once."""
        if not self.flight:
            return []
        self.advance_floor()
        p = self.profile
        ln_spread = math.log(p.spread)
        batch: list[tuple[float, Transaction]] = []
        for _ in range(self.flight):
            rate = self.floor * math.exp(self._rng_rates.uniform(0.0, ln_spread))
            fee = math.ceil(rate * p.tx_vsize)
            self._counter += 1
            grant = grant_fn(MARKET_ADDRESS, fee + DUST)
            tx = self._market_tx(grant, fee, p.tx_vsize)
            at = self._rng_times.uniform(start, start + interval)
            batch.append((at, tx))
        batch.sort(key=lambda item: item[0])
        return batch
