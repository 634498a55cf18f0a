"""Single-threaded discrete-event simulation loop.

Owns the chain, the mempool, the indexer and (optionally) a background load,
and advances them in lockstep: foreground submissions and background arrivals
are processed in timestamp order, a block is mined every ``block_interval``
simulated seconds, and every mined block is fed to the indexer.

Genesis satoshis enter through ``grant``, which mirrors the allocation into
the indexer's shadow UTXO set so token state stays reconstructable from the
grant ledger plus the block list alone (see ``replay_state``).
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

from .background import BackgroundLoad, CongestionProfile
from .chain import Chain, Transaction, Utxo, UtxoSet
from .indexer import Brc20State, Indexer, replay
from .mempool import DAY, Mempool, MempoolConfig, SubmitResult, UnknownTx
from .wallet import WalletConfig


@dataclass(frozen=True, slots=True)
class SimConfig:
    seed: int = 0
    block_interval: float = 600.0
    block_capacity_vbytes: int = 10_150
    mempool_capacity_vbytes: int = 50_000_000
    min_relay_fee_rate: int = 1
    expiry: float = 14 * DAY
    congestion_normal_count: int = 400
    wallet: WalletConfig = field(default_factory=WalletConfig)
    log_events: bool = False

    def mempool_config(self) -> MempoolConfig:
        return MempoolConfig(
            capacity_vbytes=self.mempool_capacity_vbytes,
            block_capacity_vbytes=self.block_capacity_vbytes,
            block_interval=self.block_interval,
            expiry=self.expiry,
            min_relay_fee_rate=self.min_relay_fee_rate,
            congestion_normal_count=self.congestion_normal_count,
        )


class Simulation:
    def __init__(self, config: SimConfig, profile: CongestionProfile | None = None):
        self.config = config
        self.chain = Chain(config.block_interval)
        self.pool = Mempool(config.mempool_config(), self.chain, config.log_events)
        self.indexer = Indexer(self.chain.utxo_set)
        self.now = 0.0
        self.next_block_time = config.block_interval
        self._scheduled: list[tuple[float, int, Transaction]] = []
        self._seq = 0
        self._window_generated = -1
        self.submit_times: dict[str, float] = {}
        self.submit_heights: dict[str, int] = {}
        self.submit_results: dict[str, SubmitResult] = {}
        self.congestion_samples: list[float] = []
        self.grants_log: list[tuple[str, int]] = []
        self._watch: tuple[str, str] | None = None
        self.balance_samples: list[tuple[float, int, int]] = []
        self.event_log: list[dict] = []
        self.background: BackgroundLoad | None = None
        if profile is not None and profile.target_level > 0:
            self.background = BackgroundLoad(
                profile, config.congestion_normal_count, config.block_capacity_vbytes
            )
            for tx in self.background.sediment(self.grant):
                self._do_submit(tx, self.now)

    # -- funding -------------------------------------------------------------

    def grant(self, owner: str, value: int) -> Utxo:
        """Genesis allocation, mirrored into the indexer's shadow set."""
        utxo = self.chain.utxo_set.grant(owner, value)
        shadow = self.indexer.shadow.grant(owner, value)
        assert shadow.serial == utxo.serial
        self.grants_log.append((owner, value))
        if self.config.log_events:
            self.event_log.append(
                {"event": "grant", "t": self.now, "owner": owner, "value": value}
            )
        return utxo

    # -- submissions -----------------------------------------------------------

    def _do_submit(self, tx: Transaction, at: float) -> SubmitResult:
        result = self.pool.submit(tx, at)
        self.note_submitted(tx, at, result)
        return result

    def submit(self, tx: Transaction) -> SubmitResult:
        return self._do_submit(tx, self.now)

    def schedule(self, at: float, tx: Transaction) -> None:
        if at < self.now:
            raise ValueError("cannot schedule in the past")
        self._seq += 1
        heapq.heappush(self._scheduled, (at, self._seq, tx))

    def note_submitted(self, tx: Transaction, at: float, result: SubmitResult) -> None:
        """Record a submission done directly against the pool (wallet bundles)."""
        self.submit_times.setdefault(tx.txid, at)
        self.submit_heights.setdefault(tx.txid, self.chain.height)
        self.submit_results[tx.txid] = result
        if self.config.log_events:
            self.event_log.append(
                {
                    "event": "submit",
                    "t": at,
                    "tx": tx.to_dict(),
                    "accepted": result.accepted,
                    "reason": result.reason,
                }
            )

    # -- time ------------------------------------------------------------------

    def _ensure_window(self) -> None:
        if self.background is None:
            return
        window = int(self.next_block_time / self.config.block_interval)
        if window <= self._window_generated:
            return
        self._window_generated = window
        start = self.next_block_time - self.config.block_interval
        for at, tx in self.background.market_batch(
            self.grant, start, self.config.block_interval
        ):
            self.schedule(max(at, self.now), tx)

    def run_until(self, target: float) -> None:
        while True:
            self._ensure_window()
            horizon = min(target, self.next_block_time)
            while self._scheduled and self._scheduled[0][0] <= horizon:
                at, _, tx = heapq.heappop(self._scheduled)
                self.now = max(self.now, at)
                self._do_submit(tx, self.now)
            self.now = max(self.now, horizon)
            if self.next_block_time > target:
                return
            self.pool.tick_expiry(self.now)
            self.congestion_samples.append(self.pool.congestion())
            block = self.pool.mine_block(self.chain, self.now)
            self.indexer.apply_block(block)
            if self._watch is not None:
                avail, trans, _ = self.indexer.balance(*self._watch)
                self.balance_samples.append((self.now, avail, trans))
            if self.config.log_events:
                self.event_log.append(
                    {
                        "event": "mine",
                        "t": self.now,
                        "height": block.height,
                        "txids": [tx.txid for tx in block.transactions],
                    }
                )
            self.next_block_time += self.config.block_interval

    def run_blocks(self, count: int) -> None:
        self.run_until(self.next_block_time + (count - 1) * self.config.block_interval)

    # -- queries -----------------------------------------------------------------

    def confirmation_delay(self, txid: str) -> float | None:
        if txid not in self.submit_times:
            raise UnknownTx(txid)
        confirmed_at = self.chain.confirmation_time(txid)
        if confirmed_at is None:
            return None
        return confirmed_at - self.submit_times[txid]

    def effective_delay(self, txid: str) -> float:
        """Confirmed delay, or elapsed pending time as of now."""
        delay = self.confirmation_delay(txid)
        if delay is None:
            return self.now - self.submit_times[txid]
        return delay

    def blocks_to_confirm(self, txid: str) -> int | None:
        height = self.chain.confirmation_height(txid)
        if height is None:
            return None
        return height - self.submit_heights[txid]

    def watch_balance(self, tick: str, addr: str) -> None:
        """Sample (available, transferable) for one address at every block."""
        self._watch = (tick, addr)

    def mean_congestion(self) -> float:
        if not self.congestion_samples:
            return 0.0
        return sum(self.congestion_samples) / len(self.congestion_samples)

    def balance(self, tick: str, addr: str) -> tuple[int, int, int]:
        return self.indexer.balance(tick, addr)

    # -- replay -------------------------------------------------------------------

    def replay_state(self) -> Brc20State:
        """Token state rebuilt from the grant ledger and the block list."""
        genesis = UtxoSet()
        for owner, value in self.grants_log:
            genesis.grant(owner, value)
        return replay(self.chain.blocks, genesis)

    def export_event_log(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"event": "header", "config": {
                "block_interval": self.config.block_interval,
                "block_capacity_vbytes": self.config.block_capacity_vbytes,
                "mempool_capacity_vbytes": self.config.mempool_capacity_vbytes,
                "min_relay_fee_rate": self.config.min_relay_fee_rate,
                "expiry": self.config.expiry,
                "congestion_normal_count": self.config.congestion_normal_count,
            }}, sort_keys=True) + "\n")
            for event in self.event_log:
                fh.write(json.dumps(event, sort_keys=True) + "\n")


def run_background_load(sim: Simulation, duration: float) -> None:
    """Advance a simulation under background traffic only."""
    sim.run_until(sim.now + duration)
