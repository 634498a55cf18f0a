"""Off-chain BRC20 state machine.

Replays confirmed blocks and maintains, per token tick, the registry
(max supply, per-mint limit, running minted total) and per-address balances
split into *available* (spendable) and *transferable* (inscribed for transfer
but not yet moved).  Invalid operations are silently void; the chain never
halts on bad token data.

The indexer keeps its own shadow UTXO set so the whole token state can be
reconstructed from blocks alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .chain import Block, UtxoSet

PROTOCOL_NAMES = ("brc20", "brc-20")


@dataclass(frozen=True, slots=True)
class Deploy:
    tick: str
    max: int
    lim: int


@dataclass(frozen=True, slots=True)
class Mint:
    tick: str
    amt: int


@dataclass(frozen=True, slots=True)
class InscribeTransfer:
    tick: str
    amt: int


Brc20Op = Deploy | Mint | InscribeTransfer


def _as_amount(value) -> int | None:
    """Decimal-string or int token amount; arbitrary precision, no fractions."""
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value if value >= 0 else None
    if isinstance(value, str) and value.isdigit():
        return int(value)
    return None


def parse_envelope(raw: str) -> Brc20Op | None:
    """Parse an inscription payload; anything non-conforming is not-brc20."""
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, TypeError):
        return None
    if not isinstance(data, dict):
        return None
    tick = data.get("tick")
    if not isinstance(tick, str) or not tick:
        return None
    tick = tick.lower()
    proto = data.get("p")
    if not isinstance(proto, str):
        return None
    # Transfer inscriptions in the wild sometimes carry the tick itself in
    # the protocol field; accept that alias alongside the canonical names.
    if proto.lower() not in PROTOCOL_NAMES and proto.lower() != tick:
        return None
    op = data.get("op")
    if op == "deploy":
        maximum = _as_amount(data.get("max"))
        if maximum is None:
            return None
        lim = _as_amount(data.get("lim")) if "lim" in data else maximum
        if lim is None:
            return None
        return Deploy(tick, maximum, lim)
    if op == "mint":
        amt = _as_amount(data.get("amt"))
        return Mint(tick, amt) if amt is not None else None
    if op == "transfer":
        amt = _as_amount(data.get("amt"))
        return InscribeTransfer(tick, amt) if amt is not None else None
    return None


def transfer_inscription(tick: str, amount: int) -> str:
    """Canonical transfer payload for wallet-built inscriptions."""
    return json.dumps(
        {"p": "brc20", "op": "transfer", "tick": tick, "amt": str(amount)},
        sort_keys=True,
    )


def deploy_inscription(tick: str, maximum: int, lim: int) -> str:
    return json.dumps(
        {"p": "brc20", "op": "deploy", "tick": tick, "max": str(maximum), "lim": str(lim)},
        sort_keys=True,
    )


def mint_inscription(tick: str, amount: int) -> str:
    return json.dumps(
        {"p": "brc20", "op": "mint", "tick": tick, "amt": str(amount)}, sort_keys=True
    )


@dataclass(slots=True)
class TickInfo:
    tick: str
    max: int
    lim: int
    minted: int = 0


@dataclass(slots=True)
class BalanceEntry:
    available: int = 0
    transferable: int = 0

    @property
    def overall(self) -> int:
        return self.available + self.transferable


@dataclass(frozen=True, slots=True)
class PendingTransfer:
    inscription_ordinal: int
    tick: str
    amount: int
    inscriber: str


class Brc20State:
    def __init__(self) -> None:
        self.ticks: dict[str, TickInfo] = {}
        self.balances: dict[tuple[str, str], BalanceEntry] = {}
        self.pending: dict[int, PendingTransfer] = {}

    def entry(self, tick: str, addr: str) -> BalanceEntry:
        key = (tick, addr)
        entry = self.balances.get(key)
        if entry is None:
            entry = BalanceEntry()
            self.balances[key] = entry
        return entry

    def balance(self, tick: str, addr: str) -> tuple[int, int, int]:
        entry = self.balances.get((tick, addr))
        if entry is None:
            return (0, 0, 0)
        return (entry.available, entry.transferable, entry.overall)

    def supply_is_conserved(self) -> bool:
        totals: dict[str, int] = {t: 0 for t in self.ticks}
        for (tick, _), entry in self.balances.items():
            if entry.available < 0 or entry.transferable < 0:
                return False
            totals[tick] = totals.get(tick, 0) + entry.overall
        return all(
            totals.get(tick, 0) == info.minted and info.minted <= info.max
            for tick, info in self.ticks.items()
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Brc20State):
            return NotImplemented
        return (
            self.ticks == other.ticks
            and {k: (v.available, v.transferable) for k, v in self.balances.items()}
            == {k: (v.available, v.transferable) for k, v in other.balances.items()}
            and self.pending == other.pending
        )

    def snapshot(self) -> dict:
        return {
            "ticks": {
                t: {"max": i.max, "lim": i.lim, "minted": i.minted}
                for t, i in sorted(self.ticks.items())
            },
            "balances": {
                f"{tick}/{addr}": [e.available, e.transferable]
                for (tick, addr), e in sorted(self.balances.items())
                if e.available or e.transferable
            },
            "pending": {
                str(ordinal): {
                    "tick": p.tick,
                    "amount": p.amount,
                    "inscriber": p.inscriber,
                }
                for ordinal, p in sorted(self.pending.items())
            },
        }

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True, indent=2)

    @classmethod
    def from_snapshot(cls, data: dict) -> Brc20State:
        state = cls()
        for tick, info in data["ticks"].items():
            state.ticks[tick] = TickInfo(tick, info["max"], info["lim"], info["minted"])
        for key, (avail, trans) in data["balances"].items():
            tick, _, addr = key.partition("/")
            state.balances[(tick, addr)] = BalanceEntry(avail, trans)
        for ordinal, p in data["pending"].items():
            state.pending[int(ordinal)] = PendingTransfer(
                int(ordinal), p["tick"], p["amount"], p["inscriber"]
            )
        return state


class Indexer:
    """Single-writer block consumer deriving token balances."""

    def __init__(self, genesis: UtxoSet, log_diffs: bool = False) -> None:
        self.state = Brc20State()
        self.shadow = genesis.copy()
        self.log_diffs = log_diffs
        self.block_diffs: list[list[tuple]] = []
        # Instrumentation (derived, not part of state equality): which ordinal
        # a confirmed tx bound its envelope to, and every ordinal that ever
        # carried a pending transfer (consumed ones included).
        self.bound_by_tx: dict[str, int] = {}
        self.pending_created: set[int] = set()

    # -- balance mutation helpers, all deltas flow through here -------------

    def _bump(self, diffs: list, tick: str, addr: str, field: str, delta: int) -> None:
        entry = self.state.entry(tick, addr)
        if field == "available":
            entry.available += delta
        else:
            entry.transferable += delta
        if self.log_diffs:
            diffs.append((tick, addr, field, delta))

    def apply_block(self, block: Block) -> None:
        diffs: list[tuple] = []
        for tx in block.transactions:
            self._apply_tx(tx, diffs)
        if self.log_diffs:
            self.block_diffs.append(diffs)

    def _apply_tx(self, tx, diffs: list) -> None:
        moved = self._pending_in_inputs(tx)
        envelopes = self.shadow.apply_transaction(tx)

        for pending in moved:
            self._consume_pending(pending, tx, diffs)

        if envelopes:
            self.bound_by_tx[tx.txid] = envelopes[0].bound_ordinal
            op = parse_envelope(envelopes[0].raw)
            if op is not None:
                self._apply_op(op, tx.outputs[0].owner, envelopes[0].bound_ordinal, diffs)

    def _pending_in_inputs(self, tx) -> list[PendingTransfer]:
        hits: list[PendingTransfer] = []
        if not self.state.pending:
            return hits
        for ordinal in sorted(self.state.pending):
            for inp in tx.inputs:
                utxo = self.shadow.utxos.get(inp.outpoint)
                if utxo is None:
                    continue
                if any(r.contains(ordinal) for r in utxo.ordinals):
                    hits.append(self.state.pending[ordinal])
                    break
        return hits

    def _consume_pending(self, pending, tx, diffs: list) -> None:
        """The inscribed satoshi moved: settle the transfer to wherever it went.

        A satoshi burned as fee returns the tokens to the inscriber so that
        supply is conserved; a satoshi arriving back at the inscriber restores
        its available balance.
        """
        destination: str | None = None
        for index, out in enumerate(tx.outputs):
            utxo = self.shadow.utxos.get((tx.txid, index))
            if utxo is not None and any(
                r.contains(pending.inscription_ordinal) for r in utxo.ordinals
            ):
                destination = out.owner
                break
        if destination is None:
            destination = pending.inscriber  # fee slice: return to sender
        self._bump(diffs, pending.tick, pending.inscriber, "transferable", -pending.amount)
        self._bump(diffs, pending.tick, destination, "available", pending.amount)
        del self.state.pending[pending.inscription_ordinal]

    def _apply_op(self, op: Brc20Op, owner: str, bound_ordinal: int, diffs: list) -> None:
        state = self.state
        if isinstance(op, Deploy):
            if op.tick in state.ticks:
                return  # first deploy wins
            if op.max < 1 or op.lim < 1 or op.lim > op.max:
                return
            state.ticks[op.tick] = TickInfo(op.tick, op.max, op.lim)
            return
        info = state.ticks.get(op.tick)
        if info is None or op.amt < 1:
            return
        if isinstance(op, Mint):
            if op.amt > info.lim or info.minted + op.amt > info.max:
                return  # whole mint is void, no partial credit
            info.minted += op.amt
            self._bump(diffs, op.tick, owner, "available", op.amt)
            return
        # InscribeTransfer: void when the inscriber cannot cover the amount,
        # which is exactly what voids falsified transfer inscriptions.
        entry = state.entry(op.tick, owner)
        if entry.available < op.amt or bound_ordinal in state.pending:
            return
        self._bump(diffs, op.tick, owner, "available", -op.amt)
        self._bump(diffs, op.tick, owner, "transferable", op.amt)
        state.pending[bound_ordinal] = PendingTransfer(bound_ordinal, op.tick, op.amt, owner)
        self.pending_created.add(bound_ordinal)

    def balance(self, tick: str, addr: str) -> tuple[int, int, int]:
        return self.state.balance(tick, addr)

    def inscription_of(self, txid: str) -> int | None:
        """Ordinal a confirmed tx bound its envelope to, if any."""
        return self.bound_by_tx.get(txid)


def replay(blocks: list[Block], genesis: UtxoSet) -> Brc20State:
    """Reconstruct token state by folding blocks over an empty state."""
    indexer = Indexer(genesis)
    for block in blocks:
        indexer.apply_block(block)
    return indexer.state
