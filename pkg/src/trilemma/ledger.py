"""UTXO ledger as a deterministic transition system.

``apply_tx`` is the single-step transition, ``apply_batch`` its n-fold
left fold, and ``apply_parallel`` the partitioned two-phase schedule that
must agree bit-for-bit (by ``state_digest``) with ``apply_batch``.

Canonical transaction serialization (all integers little-endian)::

    u32 n_inputs
      per input:  32B prev txid | u32 prev index | u32 witness_len | witness
    u32 n_outputs
      per output: u64 value | 32B owner digest
    u8  is_coinbase (0 or 1)
    u32 memo_len | memo

``txid = sha256(sha256(serialization))``.
"""

from __future__ import annotations

import functools
import hashlib
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .hashing import HASH_SIZE, Reader, sha256, sha256d, u8, u32, u64, var_bytes

MAX_VALUE = 2**64 - 1

VERIFY_PREIMAGE = "preimage"
VERIFY_ED25519 = "ed25519"


class LedgerError(Exception):
    """Base class for transaction rejection."""


class MissingInput(LedgerError):
    """Referenced outpoint is not in the UTXO set (unknown or already spent)."""


class ValueOverflow(LedgerError):
    """Outputs of a non-coinbase transaction exceed its resolved inputs."""


class BadWitness(LedgerError):
    """Witness does not prove ownership of the spent output."""


class DuplicateOutpoint(LedgerError):
    """Transaction would create an outpoint that already exists."""


class MalformedTransaction(LedgerError):
    """Structurally invalid transaction (e.g. non-coinbase without inputs)."""


class BatchError(LedgerError):
    """A batch failed atomically at ``index``; ``state`` is the untouched input."""

    def __init__(self, index: int, cause: LedgerError, state: "LedgerState") -> None:
        super().__init__(f"transaction {index} rejected: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause
        self.state = state


@dataclass(frozen=True, order=True)
class Outpoint:
    txid: bytes
    index: int

    def __post_init__(self) -> None:
        if len(self.txid) != HASH_SIZE:
            raise ValueError("txid must be 32 bytes")
        if not 0 <= self.index < 2**32:
            raise ValueError("output index out of range")

    def serialize(self) -> bytes:
        return self.txid + u32(self.index)

    def __repr__(self) -> str:
        return f"Outpoint({self.txid.hex()[:16]}…:{self.index})"


@dataclass(frozen=True)
class TxOutput:
    value: int
    owner: bytes

    def __post_init__(self) -> None:
        if not 0 < self.value <= MAX_VALUE:
            raise ValueError(f"output value must be in (0, 2^64), got {self.value}")
        if len(self.owner) != HASH_SIZE:
            raise ValueError("owner digest must be 32 bytes")

    def serialize(self) -> bytes:
        return u64(self.value) + self.owner


@dataclass(frozen=True)
class TxInput:
    outpoint: Outpoint
    witness: bytes = b""


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[TxInput, ...] = ()
    outputs: tuple[TxOutput, ...] = ()
    is_coinbase: bool = False
    # free-form bytes; makes coinbase txids unique and lets workloads grind txids
    memo: bytes = b""

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    def serialize(self, *, strip_witness: bool = False) -> bytes:
        parts = [u32(len(self.inputs))]
        for txin in self.inputs:
            parts.append(txin.outpoint.serialize())
            parts.append(var_bytes(b"" if strip_witness else txin.witness))
        parts.append(u32(len(self.outputs)))
        parts.extend(out.serialize() for out in self.outputs)
        parts.append(u8(1 if self.is_coinbase else 0))
        parts.append(var_bytes(self.memo))
        return b"".join(parts)

    @classmethod
    def deserialize(cls, data: bytes) -> "Transaction":
        r = Reader(data)
        tx = cls.read(r)
        if not r.at_end():
            raise ValueError("trailing bytes after transaction")
        return tx

    @classmethod
    def read(cls, r: Reader) -> "Transaction":
        inputs = []
        for _ in range(r.u32()):
            op = Outpoint(r.take(32), r.u32())
            inputs.append(TxInput(op, r.var_bytes()))
        outputs = []
        for _ in range(r.u32()):
            value = r.u64()
            outputs.append(TxOutput(value, r.take(32)))
        flag = r.u8()
        if flag not in (0, 1):
            raise ValueError("bad coinbase flag")
        return cls(tuple(inputs), tuple(outputs), bool(flag), r.var_bytes())

    @cached_property
    def txid(self) -> bytes:
        return sha256d(self.serialize())

    @cached_property
    def sighash(self) -> bytes:
        """Message signed by every input in ed25519 mode (witnesses blanked)."""
        return sha256d(self.serialize(strip_witness=True))

    @property
    def size(self) -> int:
        return len(self.serialize())

    def output_value(self) -> int:
        return sum(out.value for out in self.outputs)


def coinbase(outputs: Sequence[TxOutput], memo: bytes = b"") -> Transaction:
    return Transaction((), tuple(outputs), True, memo)


def owner_for_secret(secret: bytes) -> bytes:
    """Owner digest whose preimage ``secret`` serves as the spending witness."""
    return sha256(secret)


def ed25519_owner(public_key: bytes) -> bytes:
    return sha256(public_key)


def sign_ed25519(tx: Transaction, private_keys: Sequence) -> Transaction:
    """Return ``tx`` with each input's witness set to ``pubkey || signature``.

    ``private_keys[i]`` is a ``cryptography`` Ed25519PrivateKey for input i.
    """
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    msg = tx.sighash
    inputs = []
    for txin, key in zip(tx.inputs, private_keys, strict=True):
        pub = key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        inputs.append(TxInput(txin.outpoint, pub + key.sign(msg)))
    return Transaction(tuple(inputs), tx.outputs, tx.is_coinbase, tx.memo)


def _witness_ok(tx: Transaction, witness: bytes, owner: bytes, verify: str) -> bool:
    if verify == VERIFY_PREIMAGE:
        return sha256(witness) == owner
    if verify == VERIFY_ED25519:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        if len(witness) != 96 or sha256(witness[:32]) != owner:
            return False
        try:
            Ed25519PublicKey.from_public_bytes(witness[:32]).verify(witness[32:], tx.sighash)
        except InvalidSignature:
            return False
        return True
    raise ValueError(f"unknown verification mode {verify!r}")


@dataclass(frozen=True)
class LedgerState:
    """Immutable UTXO set plus block height."""

    utxo: Mapping[Outpoint, TxOutput] = field(default_factory=dict)
    height: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.utxo, MappingProxyType):
            object.__setattr__(self, "utxo", MappingProxyType(dict(self.utxo)))

    def __hash__(self) -> int:
        return hash((self.state_digest, self.height))

    @cached_property
    def state_digest(self) -> bytes:
        """SHA-256 over the sorted (outpoint || output) serializations."""
        h = hashlib.sha256()
        for entry in sorted(op.serialize() + out.serialize() for op, out in self.utxo.items()):
            h.update(entry)
        return h.digest()

    def total_value(self) -> int:
        return sum(out.value for out in self.utxo.values())

    def __len__(self) -> int:
        return len(self.utxo)


GENESIS = LedgerState()


def tx_ops(tx: Transaction) -> int:
    """Validation operation count: one lookup per input and per created output
    (duplicate check), plus one signature check per input."""
    return 2 * len(tx.inputs) + len(tx.outputs)


def _apply_into(utxo: dict, tx: Transaction, verify: str) -> None:
    """Validate ``tx`` against ``utxo`` and mutate it only if validation passes."""
    if tx.is_coinbase:
        if tx.inputs:
            raise MalformedTransaction("coinbase must not have inputs")
    elif not tx.inputs:
        raise MalformedTransaction("non-coinbase transaction needs at least one input")
    if not tx.outputs:
        raise MalformedTransaction("transaction has no outputs")

    spent = []
    seen = set()
    total_in = 0
    for txin in tx.inputs:
        op = txin.outpoint
        out = utxo.get(op)
        if out is None or op in seen:
            raise MissingInput(f"{op!r} not spendable")
        if not _witness_ok(tx, txin.witness, out.owner, verify):
            raise BadWitness(f"witness for {op!r} does not match owner")
        seen.add(op)
        spent.append(op)
        total_in += out.value
    if not tx.is_coinbase and tx.output_value() > total_in:
        raise ValueOverflow(f"outputs {tx.output_value()} exceed inputs {total_in}")

    txid = tx.txid
    created = [Outpoint(txid, i) for i in range(len(tx.outputs))]
    for op in created:
        if op in utxo:
            raise DuplicateOutpoint(f"{op!r} already exists")
    for op in spent:
        del utxo[op]
    for op, out in zip(created, tx.outputs):
        utxo[op] = out


def apply_tx(state: LedgerState, tx: Transaction, *, verify: str = VERIFY_PREIMAGE) -> LedgerState:
    utxo = dict(state.utxo)
    _apply_into(utxo, tx, verify)
    return LedgerState(MappingProxyType(utxo), state.height)


def apply_batch(
    state: LedgerState, txs: Iterable[Transaction], *, verify: str = VERIFY_PREIMAGE
) -> LedgerState:
    """Left fold of ``apply_tx``; atomic on failure (raises ``BatchError``)."""
    utxo = dict(state.utxo)
    for i, tx in enumerate(txs):
        try:
            _apply_into(utxo, tx, verify)
        except LedgerError as exc:
            raise BatchError(i, exc, state) from exc
    return LedgerState(MappingProxyType(utxo), state.height)


def peak_utxo_size(state: LedgerState, txs: Iterable[Transaction]) -> int:
    """Largest UTXO-set size seen while folding ``txs`` (no validation)."""
    size = peak = len(state.utxo)
    for tx in txs:
        size += len(tx.outputs) - len(tx.inputs)
        peak = max(peak, size)
    return peak


def value_flow(state: LedgerState, txs: Sequence[Transaction]) -> tuple[int, int]:
    """``(issuance, fees)`` of a batch that is valid against ``state``."""
    created: dict[Outpoint, TxOutput] = {}
    issuance = fees = 0
    for tx in txs:
        if tx.is_coinbase:
            issuance += tx.output_value()
        else:
            spent = 0
            for txin in tx.inputs:
                out = created.get(txin.outpoint) or state.utxo.get(txin.outpoint)
                if out is None:
                    raise MissingInput(f"{txin.outpoint!r} not resolvable")
                spent += out.value
            fees += spent - tx.output_value()
        for i, out in enumerate(tx.outputs):
            created[Outpoint(tx.txid, i)] = out
    return issuance, fees


# -- partitioning ------------------------------------------------------------


def partition_index(txid: bytes, m: int) -> int:
    """Partition of an outpoint: first 64 bits of its txid (big-endian) mod m."""
    return int.from_bytes(txid[:8], "big") % m


@dataclass(frozen=True)
class UtxoPartition:
    partition_id: int
    members: frozenset


def partition_state(state: LedgerState, m: int) -> list[UtxoPartition]:
    if m < 1:
        raise ValueError("partition count must be >= 1")
    buckets: list[set] = [set() for _ in range(m)]
    for op in state.utxo:
        buckets[partition_index(op.txid, m)].add(op)
    return [UtxoPartition(i, frozenset(b)) for i, b in enumerate(buckets)]


@dataclass(frozen=True)
class ValidationCost:
    partition_ops: tuple[int, ...]
    merge_ops: int
    deferred: int
    fallback: bool = False

    @property
    def critical_path(self) -> int:
        return max(self.partition_ops, default=0) + self.merge_ops

    @property
    def total_ops(self) -> int:
        return sum(self.partition_ops) + self.merge_ops


class _ScheduleConflict(Exception):
    pass


def _run_phase(utxo: dict, items: list[tuple[int, Transaction]], verify: str, created_at=None):
    """Apply ``items`` in order; returns the index of the first failure or None."""
    for i, tx in items:
        if created_at is not None:
            for txin in tx.inputs:
                j = created_at.get(txin.outpoint.txid)
                if j is not None and j >= i:
                    return i
        try:
            _apply_into(utxo, tx, verify)
        except LedgerError:
            return i
    return None


def apply_parallel(
    state: LedgerState,
    txs: Sequence[Transaction],
    m: int,
    *,
    verify: str = VERIFY_PREIMAGE,
    max_workers: int | None = None,
) -> tuple[LedgerState, ValidationCost]:
    """Two-phase partitioned validation.

    A transaction whose inputs and outputs all live in one partition, and
    which spends nothing produced by a deferred transaction, is validated in
    that partition's phase. Everything else is deferred to a sequential merge
    phase run after all partitions join. Sequence order is kept inside each
    phase. Any failure falls back to ``apply_batch`` so the error (index and
    cause) is exactly the sequential one.
    """
    if m < 1:
        raise ValueError("partition count must be >= 1")
    txs = list(txs)
    local: list[list[tuple[int, Transaction]]] = [[] for _ in range(m)]
    spanners: list[tuple[int, Transaction]] = []
    deferred_txids: set[bytes] = set()
    created_at: dict[bytes, int] = {}
    for i, tx in enumerate(txs):
        created_at.setdefault(tx.txid, i)
        home = partition_index(tx.txid, m)
        is_local = all(
            partition_index(txin.outpoint.txid, m) == home
            and txin.outpoint.txid not in deferred_txids
            for txin in tx.inputs
        )
        if is_local:
            local[home].append((i, tx))
        else:
            spanners.append((i, tx))
            deferred_txids.add(tx.txid)

    shards: list[dict] = [{} for _ in range(m)]
    for op, out in state.utxo.items():
        shards[partition_index(op.txid, m)][op] = out

    def run(p: int):
        return _run_phase(shards[p], local[p], verify)

    if max_workers and max_workers > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            failures = list(pool.map(run, range(m)))
    else:
        failures = [run(p) for p in range(m)]

    merged: dict = {}
    failed = any(f is not None for f in failures)
    if not failed:
        for shard in shards:
            merged.update(shard)
        failed = _run_phase(merged, spanners, verify, created_at) is not None

    partition_ops = tuple(sum(tx_ops(tx) for _, tx in items) for items in local)
    merge_ops = sum(tx_ops(tx) for _, tx in spanners)
    if failed:
        # raises the canonical BatchError; success here would mean the
        # schedule was stricter than the fold, which is reported, not hidden
        result = apply_batch(state, txs, verify=verify)
        return result, ValidationCost((sum(tx_ops(t) for t in txs),), 0, len(txs), fallback=True)
    cost = ValidationCost(partition_ops, merge_ops, len(spanners))
    return LedgerState(MappingProxyType(merged), state.height), cost


# -- canonical workloads -----------------------------------------------------

WORKLOAD_KINDS = ("partitionable", "cross_partition", "mixed")


@dataclass(frozen=True)
class Workload:
    """Seeded generator of valid transaction sequences.

    ``modulus`` fixes the partition classes used when building txs:
    a partitionable workload stays partitionable for every m dividing it;
    cross-partition txs draw inputs from classes of different parity, so they
    span partitions for every even m.
    """

    kind: str = "partitionable"
    seed: int = 0
    modulus: int = 8
    n_keys: int = 16
    funding_per_class: int = 16
    funding_value: int = 10**9

    def __post_init__(self) -> None:
        if self.kind not in WORKLOAD_KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.modulus < 2:
            raise ValueError("modulus must be >= 2")

    def generate(self, n: int) -> tuple[LedgerState, list[Transaction]]:
        """Genesis state and the first ``n`` workload transactions.

        Prefixes are stable: ``generate(n)[1] == generate(N)[1][:n]``.
        """
        genesis, txs = _generate_cached(self, _round_up(n))
        return genesis, txs[:n]


def _round_up(n: int) -> int:
    size = 1024
    while size < n:
        size *= 2
    return size


def _grind(tx: Transaction, cls: int, modulus: int) -> Transaction:
    counter = 0
    while True:
        cand = Transaction(tx.inputs, tx.outputs, tx.is_coinbase, tx.memo + u32(counter))
        if partition_index(cand.txid, modulus) == cls:
            return cand
        counter += 1


@functools.lru_cache(maxsize=16)
def _generate_cached(w: Workload, n: int) -> tuple[LedgerState, tuple[Transaction, ...]]:
    rng = random.Random(w.seed)
    secrets = [sha256(f"workload-key:{w.seed}:{i}".encode()) for i in range(w.n_keys)]
    owners = [owner_for_secret(s) for s in secrets]
    secret_of = dict(zip(owners, secrets))

    pools: list[list[tuple[Outpoint, TxOutput]]] = [[] for _ in range(w.modulus)]
    funding = []
    for cls in range(w.modulus):
        outs = tuple(TxOutput(w.funding_value, rng.choice(owners)) for _ in range(w.funding_per_class))
        cb = _grind(coinbase(outs, memo=b"genesis" + u32(cls)), cls, w.modulus)
        funding.append(cb)
        pools[cls].extend((Outpoint(cb.txid, i), o) for i, o in enumerate(cb.outputs))
    genesis = apply_batch(GENESIS, funding)

    def draw(cls: int) -> tuple[Outpoint, TxOutput]:
        pool = pools[cls]
        k = rng.randrange(len(pool))
        pool[k], pool[-1] = pool[-1], pool[k]
        return pool.pop()

    txs = []
    for _ in range(n):
        kind = w.kind
        if kind == "mixed":
            kind = "partitionable" if rng.random() < 0.5 else "cross_partition"
        if kind == "partitionable":
            live = [c for c in range(w.modulus) if pools[c]]
            if not live:
                raise RuntimeError("workload pools exhausted")
            cls = rng.choice(live)
            want = 2 if rng.random() < 0.5 and len(pools[cls]) >= 2 else 1
            spent = [draw(cls) for _ in range(want)]
            home = cls
        else:
            pairs = [c for c in range(w.modulus) if pools[c] and pools[c ^ 1]]
            if not pairs:
                raise RuntimeError("workload pools exhausted")
            c1 = rng.choice(pairs)
            spent = [draw(c1), draw(c1 ^ 1)]
            home = None
        total = sum(o.value for _, o in spent)
        # spanners never feed their own classes, so they create at least as many
        # outputs as they consume to keep every pool from draining
        n_out = rng.randint(1, 3) if home is not None else rng.randint(2, 3)
        fee = rng.randint(0, 3)
        if total - fee < n_out:
            n_out, fee = 1, 0
        budget = total - fee
        cuts = sorted(rng.sample(range(1, budget), n_out - 1)) if n_out > 1 else []
        values = [b - a for a, b in zip([0, *cuts], [*cuts, budget])]
        outputs = tuple(TxOutput(v, rng.choice(owners)) for v in values)
        inputs = tuple(TxInput(op, secret_of[o.owner]) for op, o in spent)
        tx = Transaction(inputs, outputs, False, b"")
        if home is not None:
            tx = _grind(tx, home, w.modulus)
        txs.append(tx)
        cls_out = partition_index(tx.txid, w.modulus)
        pools[cls_out].extend((Outpoint(tx.txid, i), o) for i, o in enumerate(outputs))
    return genesis, tuple(txs)


def validation_cost_curve(
    workload: Workload, n_grid: Sequence[int], m: int, *, verify: str = VERIFY_PREIMAGE
) -> list[tuple[int, int]]:
    """Critical-path operation count of the batch transition at each n."""
    if not n_grid:
        raise ValueError("n_grid must be non-empty")
    if list(n_grid) != sorted(n_grid):
        raise ValueError("n_grid must be ascending")
    genesis, txs = workload.generate(max(n_grid))
    points = []
    for n in n_grid:
        _, cost = apply_parallel(genesis, txs[:n], m, verify=verify)
        points.append((n, cost.critical_path))
    return points
