"""UTXO ledger with ordinal (per-satoshi) tracking.

Satoshis carry serial numbers that survive transactions: input ranges are
concatenated in input order and sliced into outputs in output order, with the
trailing slice burned as the miner fee.  Ownership is an opaque address label;
scripts and signatures are out of scope.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

MAX_SEQUENCE = 0xFFFFFFFF
RBF_SEQUENCE = 0xFFFFFFFD  # highest sequence value that still signals replaceability


class ChainError(Exception):
    pass


class MissingInput(ChainError):
    """Referenced outpoint is unknown or already spent."""


class NegativeFee(ChainError):
    """Transaction outputs exceed its inputs."""


class LengthMismatch(ChainError):
    """Ordinal assignment called with inconsistent satoshi totals."""


class OrdinalBurned(ChainError):
    """Ordinal fell into a fee slice and no longer sits in any UTXO."""


class OrdinalUnknown(ChainError):
    """Ordinal was never allocated in this simulation."""


@dataclass(frozen=True, slots=True)
class OrdinalRange:
    """Contiguous satoshi serial-number interval [start, start + length)."""

    start: int
    length: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.length < 1:
            raise ValueError(f"bad ordinal range ({self.start}, {self.length})")

    @property
    def end(self) -> int:
        return self.start + self.length

    def contains(self, ordinal: int) -> bool:
        return self.start <= ordinal < self.end


@dataclass(frozen=True, slots=True)
class TxInput:
    outpoint: tuple[str, int]
    sequence: int = MAX_SEQUENCE

    def __post_init__(self) -> None:
        if not 0 <= self.sequence <= MAX_SEQUENCE:
            raise ValueError(f"sequence {self.sequence:#x} out of range")


@dataclass(frozen=True, slots=True)
class TxOutput:
    value: int
    owner: str
    inscription: str | None = None

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("negative output value")
        if not self.owner:
            raise ValueError("empty owner address")


@dataclass(frozen=True, slots=True)
class Transaction:
    txid: str
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    vsize: int

    def __post_init__(self) -> None:
        if self.vsize < 1:
            raise ValueError("vsize must be >= 1")
        # The indexer binds an inscription to the first satoshi of the first
        # output, so an envelope anywhere else (or on an empty output, which
        # never materializes) would be unreachable.
        for i, out in enumerate(self.outputs):
            if out.inscription is not None and (i != 0 or out.value < 1):
                raise ValueError("inscription envelope must sit on a funded output 0")

    @property
    def output_total(self) -> int:
        return sum(o.value for o in self.outputs)

    @property
    def rbf_enabled(self) -> bool:
        return any(inp.sequence <= RBF_SEQUENCE for inp in self.inputs)

    def to_dict(self) -> dict:
        return {
            "txid": self.txid,
            "inputs": [
                {"outpoint": list(i.outpoint), "sequence": i.sequence}
                for i in self.inputs
            ],
            "outputs": [
                {"value": o.value, "owner": o.owner, "inscription": o.inscription}
                for o in self.outputs
            ],
            "vsize": self.vsize,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Transaction:
        return cls(
            txid=data["txid"],
            inputs=tuple(
                TxInput((i["outpoint"][0], i["outpoint"][1]), i["sequence"])
                for i in data["inputs"]
            ),
            outputs=tuple(
                TxOutput(o["value"], o["owner"], o.get("inscription"))
                for o in data["outputs"]
            ),
            vsize=data["vsize"],
        )


def make_txid(inputs, outputs, vsize: int, tag: str = "") -> str:
    """Deterministic transaction id derived from content."""
    h = hashlib.sha256()
    h.update(tag.encode())
    for inp in inputs:
        h.update(f"{inp.outpoint[0]}:{inp.outpoint[1]}:{inp.sequence}".encode())
    for out in outputs:
        h.update(f"{out.value}:{out.owner}:{out.inscription}".encode())
    h.update(str(vsize).encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True, slots=True)
class InscriptionEnvelope:
    """An inscription payload bound to the satoshi it rides on."""

    raw: str
    bound_ordinal: int


@dataclass(frozen=True, slots=True)
class Utxo:
    serial: tuple[str, int]
    value: int
    owner: str
    ordinals: tuple[OrdinalRange, ...]

    def __post_init__(self) -> None:
        if sum(r.length for r in self.ordinals) != self.value:
            raise ValueError("ordinal ranges do not cover the UTXO value")

    def first_ordinal(self) -> int:
        return self.ordinals[0].start


@dataclass(slots=True)
class Block:
    height: int
    timestamp: float
    transactions: list[Transaction] = field(default_factory=list)


def assign_ordinals(
    input_ranges: list[list[OrdinalRange]],
    output_values: list[int],
    fee: int,
) -> list[list[OrdinalRange]]:
    """Slice concatenated input ranges into outputs, FIFO.

    The trailing ``fee`` satoshis of the concatenation are the miner fee and
    appear in no output.  Pure function; raises LengthMismatch when the totals
    disagree.
    """
    stream: list[OrdinalRange] = [r for ranges in input_ranges for r in ranges]
    total_in = sum(r.length for r in stream)
    if fee < 0 or any(v < 0 for v in output_values):
        raise LengthMismatch("negative output value or fee")
    if total_in != sum(output_values) + fee:
        raise LengthMismatch(
            f"{total_in} input sats vs {sum(output_values)} out + {fee} fee"
        )
    out: list[list[OrdinalRange]] = []
    idx = 0
    offset = 0  # satoshis already taken from stream[idx]
    for value in output_values:
        slices: list[OrdinalRange] = []
        need = value
        while need > 0:
            rng = stream[idx]
            avail = rng.length - offset
            take = min(avail, need)
            slices.append(OrdinalRange(rng.start + offset, take))
            need -= take
            offset += take
            if offset == rng.length:
                idx += 1
                offset = 0
        out.append(slices)
    return out


class UtxoSet:
    """Mutable UTXO set with ordinal bookkeeping.

    One set is owned by one thread at a time; ``copy()`` gives an independent
    snapshot for replay.  Genesis satoshis enter via ``grant`` since there is
    no coinbase in this model.
    """

    def __init__(self) -> None:
        self.utxos: dict[tuple[str, int], Utxo] = {}
        self.burned: list[OrdinalRange] = []
        self.inscribed: dict[int, str] = {}  # bound ordinal -> raw payload
        self._next_ordinal = 0
        self._grant_count = 0

    def copy(self) -> UtxoSet:
        dup = UtxoSet()
        dup.utxos = dict(self.utxos)
        dup.burned = list(self.burned)
        dup.inscribed = dict(self.inscribed)
        dup._next_ordinal = self._next_ordinal
        dup._grant_count = self._grant_count
        return dup

    def grant(self, owner: str, value: int) -> Utxo:
        """Allocate fresh satoshis to an address (genesis funding)."""
        if value < 1:
            raise ValueError("grant value must be >= 1")
        serial = (f"genesis-{self._grant_count}", 0)
        self._grant_count += 1
        utxo = Utxo(serial, value, owner, (OrdinalRange(self._next_ordinal, value),))
        self._next_ordinal += value
        self.utxos[serial] = utxo
        return utxo

    def balance(self, owner: str) -> int:
        return sum(u.value for u in self.utxos.values() if u.owner == owner)

    def owned_by(self, owner: str) -> list[Utxo]:
        return [u for u in self.utxos.values() if u.owner == owner]

    def input_value(self, tx: Transaction) -> int:
        """Sum of the transaction's input values; raises MissingInput."""
        total = 0
        for inp in tx.inputs:
            utxo = self.utxos.get(inp.outpoint)
            if utxo is None:
                raise MissingInput(f"{inp.outpoint} unknown or spent")
            total += utxo.value
        return total

    def fee_of(self, tx: Transaction) -> int:
        fee = self.input_value(tx) - tx.output_total
        if fee < 0:
            raise NegativeFee(f"tx {tx.txid} outputs exceed inputs")
        return fee

    def carries_inscription(self, utxo: Utxo) -> bool:
        return any(
            rng.start <= ordinal < rng.end
            for ordinal in self.inscribed
            for rng in utxo.ordinals
        )

    def apply_transaction(self, tx: Transaction) -> list[InscriptionEnvelope]:
        """Spend the inputs, create the outputs, burn the fee slice.

        Returns the envelopes newly bound by this transaction (at most one).
        """
        spent: list[Utxo] = []
        seen: set[tuple[str, int]] = set()
        total_in = 0
        for inp in tx.inputs:
            if inp.outpoint in seen:
                raise MissingInput(f"{inp.outpoint} spent twice in one tx")
            seen.add(inp.outpoint)
            utxo = self.utxos.get(inp.outpoint)
            if utxo is None:
                raise MissingInput(f"{inp.outpoint} unknown or spent")
            spent.append(utxo)
            total_in += utxo.value
        fee = total_in - tx.output_total
        if fee < 0:
            raise NegativeFee(f"tx {tx.txid} outputs exceed inputs")

        input_ranges = [list(u.ordinals) for u in spent]
        values = [o.value for o in tx.outputs]
        assigned = assign_ordinals(input_ranges, values, fee)

        for inp in tx.inputs:
            del self.utxos[inp.outpoint]
        for index, out in enumerate(tx.outputs):
            if out.value == 0:
                continue
            serial = (tx.txid, index)
            self.utxos[serial] = Utxo(serial, out.value, out.owner, tuple(assigned[index]))
        if fee:
            flat = [r for ranges in input_ranges for r in ranges]
            total_in = sum(r.length for r in flat)
            burned = assign_ordinals([flat], [total_in - fee, fee], 0)[1]
            self.burned.extend(burned)

        envelopes: list[InscriptionEnvelope] = []
        if tx.outputs and tx.outputs[0].inscription is not None and tx.outputs[0].value > 0:
            bound = assigned[0][0].start
            env = InscriptionEnvelope(tx.outputs[0].inscription, bound)
            self.inscribed[bound] = env.raw
            envelopes.append(env)
        return envelopes

    def locate_ordinal(self, ordinal: int) -> Utxo:
        """Find the unspent UTXO holding an ordinal."""
        for utxo in self.utxos.values():
            for rng in utxo.ordinals:
                if rng.contains(ordinal):
                    return utxo
        for rng in self.burned:
            if rng.contains(ordinal):
                raise OrdinalBurned(f"ordinal {ordinal} was burned as fee")
        raise OrdinalUnknown(f"ordinal {ordinal} never allocated or still unassigned")

    def to_dict(self) -> dict:
        return {
            "next_ordinal": self._next_ordinal,
            "grant_count": self._grant_count,
            "burned": [[r.start, r.length] for r in self.burned],
            "inscribed": {str(k): v for k, v in sorted(self.inscribed.items())},
            "utxos": {
                f"{serial[0]}:{serial[1]}": {
                    "value": u.value,
                    "owner": u.owner,
                    "ordinals": [[r.start, r.length] for r in u.ordinals],
                }
                for serial, u in sorted(self.utxos.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> UtxoSet:
        out = cls()
        out._next_ordinal = data["next_ordinal"]
        out._grant_count = data["grant_count"]
        out.burned = [OrdinalRange(s, n) for s, n in data["burned"]]
        out.inscribed = {int(k): v for k, v in data["inscribed"].items()}
        for key, entry in data["utxos"].items():
            txid, _, index = key.rpartition(":")
            serial = (txid, int(index))
            out.utxos[serial] = Utxo(
                serial,
                entry["value"],
                entry["owner"],
                tuple(OrdinalRange(s, n) for s, n in entry["ordinals"]),
            )
        return out


def apply_transaction(state: UtxoSet, tx: Transaction) -> UtxoSet:
    """Functional wrapper over UtxoSet.apply_transaction: returns a new set."""
    updated = state.copy()
    updated.apply_transaction(tx)
    return updated


def locate_inscription(state: UtxoSet, ordinal: int) -> str:
    """Owner address of the UTXO currently holding an ordinal."""
    return state.locate_ordinal(ordinal).owner


class Chain:
    """Confirmed blocks plus the UTXO set they produce."""

    def __init__(self, block_interval: float = 600.0) -> None:
        self.blocks: list[Block] = []
        self.utxo_set = UtxoSet()
        self.block_interval = block_interval
        self._tx_index: dict[str, tuple[int, float]] = {}  # txid -> (height, time)

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def append_block(self, block: Block) -> None:
        for tx in block.transactions:
            self.utxo_set.apply_transaction(tx)
            self._tx_index[tx.txid] = (block.height, block.timestamp)
        self.blocks.append(block)

    def confirmed(self, txid: str) -> bool:
        return txid in self._tx_index

    def confirmation_time(self, txid: str) -> float | None:
        entry = self._tx_index.get(txid)
        return entry[1] if entry else None

    def confirmation_height(self, txid: str) -> int | None:
        entry = self._tx_index.get(txid)
        return entry[0] if entry else None
