"""Proof-of-work blocks, cumulative-work chain selection, and the adversarial
reorg race behind the security predicate.

Block serialization: 120-byte header, ``u32`` tx count, then each transaction
as ``u32 length || tx bytes``. Chain serialization: ``u32`` block count, then
each block as ``u32 length || block bytes``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .hashing import ZERO_HASH, Reader, derive_seed, sha256d, u32, u64, var_bytes
from .ledger import (
    GENESIS,
    VERIFY_PREIMAGE,
    BatchError,
    LedgerError,
    LedgerState,
    Transaction,
    TxOutput,
    Workload,
    apply_batch,
    coinbase,
    value_flow,
)
from .merkle import MAX_TARGET, BlockHeader, merkle_root

DEFAULT_MAX_LAG = 100
BLOCK_INTERVAL_S = 600
DEFAULT_REWARD = 50 * 10**8


class ConsensusError(Exception):
    pass


class InvalidBatch(ConsensusError):
    def __init__(self, cause: BatchError) -> None:
        super().__init__(str(cause))
        self.cause = cause


class InvalidBlock(ConsensusError):
    pass


class TargetUnreachable(ConsensusError):
    pass


class EmptyCandidateSet(ConsensusError):
    pass


def block_work(target: int) -> int:
    """Expected hash attempts to meet ``target``: floor(2^256 / (target + 1))."""
    return 2**256 // (target + 1)


def target_for_work(expected_attempts: int) -> int:
    """Target whose block work is ``expected_attempts`` (a power of two works exactly)."""
    return 2**256 // expected_attempts - 1


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "transactions", tuple(self.transactions))

    @property
    def txids(self) -> list[bytes]:
        return [tx.txid for tx in self.transactions]

    def serialize(self) -> bytes:
        parts = [self.header.serialize(), u32(len(self.transactions))]
        parts.extend(var_bytes(tx.serialize()) for tx in self.transactions)
        return b"".join(parts)

    @classmethod
    def read(cls, r: Reader) -> "Block":
        header = BlockHeader.read(r)
        txs = tuple(Transaction.deserialize(r.var_bytes()) for _ in range(r.u32()))
        return cls(header, txs)

    @classmethod
    def deserialize(cls, data: bytes) -> "Block":
        r = Reader(data)
        block = cls.read(r)
        if not r.at_end():
            raise ValueError("trailing bytes after block")
        return block

    @property
    def size(self) -> int:
        return len(self.serialize())


@dataclass(frozen=True)
class Chain:
    blocks: tuple[Block, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @cached_property
    def cumulative_work(self) -> int:
        return sum(block_work(b.header.difficulty_target) for b in self.blocks)

    @property
    def tip(self) -> BlockHeader | None:
        return self.blocks[-1].header if self.blocks else None

    def __len__(self) -> int:
        return len(self.blocks)

    def extend(self, block: Block) -> "Chain":
        return Chain(self.blocks + (block,))

    def serialize(self) -> bytes:
        return u32(len(self.blocks)) + b"".join(var_bytes(b.serialize()) for b in self.blocks)

    @classmethod
    def deserialize(cls, data: bytes) -> "Chain":
        r = Reader(data)
        blocks = tuple(Block.deserialize(r.var_bytes()) for _ in range(r.u32()))
        if not r.at_end():
            raise ValueError("trailing bytes after chain")
        return cls(blocks)


def check_block_structure(block: Block) -> None:
    txs = block.transactions
    if not txs or not txs[0].is_coinbase:
        raise InvalidBlock("first transaction must be a coinbase")
    if any(tx.is_coinbase for tx in txs[1:]):
        raise InvalidBlock("only the first transaction may be a coinbase")
    if block.header.merkle_root != merkle_root(block.txids):
        raise InvalidBlock("merkle root does not commit to the transactions")
    if not block.header.meets_target():
        raise InvalidBlock("header hash above difficulty target")


def apply_block(state: LedgerState, block: Block, *, verify: str = VERIFY_PREIMAGE) -> LedgerState:
    """Validate ``block`` and return the post-state with height advanced by one."""
    check_block_structure(block)
    if block.header.height != state.height:
        raise InvalidBlock(f"block height {block.header.height} != state height {state.height}")
    try:
        after = apply_batch(state, block.transactions, verify=verify)
    except BatchError as exc:
        raise InvalidBatch(exc) from exc
    return LedgerState(after.utxo, state.height + 1)


def validate_chain(
    chain: Chain, genesis: LedgerState = GENESIS, *, verify: str = VERIFY_PREIMAGE
) -> LedgerState:
    """Replay ``chain`` from ``genesis``; returns the tip state or raises."""
    state = genesis
    prev = ZERO_HASH
    for block in chain.blocks:
        if block.header.prev_hash != prev:
            raise InvalidBlock(f"block at height {block.header.height} does not link to its parent")
        state = apply_block(state, block, verify=verify)
        prev = block.header.hash
    return state


def mine_block(
    state: LedgerState,
    txs: Sequence[Transaction],
    prev: BlockHeader | None,
    target: int,
    rng_seed: int,
    *,
    miner: bytes = ZERO_HASH,
    reward: int = DEFAULT_REWARD,
    timestamp: int | None = None,
    max_attempts: int = 2**64,
    verify: str = VERIFY_PREIMAGE,
) -> tuple[Block, int]:
    """Assemble coinbase + ``txs`` and search nonces until the hash meets ``target``.

    The nonce walk starts at a value drawn from ``rng_seed`` and increments, so
    the attempt count is geometric with success probability (target+1)/2^256.
    """
    if target <= 0:
        raise ValueError("target must be positive")
    height = prev.height + 1 if prev is not None else 0
    cb = coinbase([TxOutput(reward, miner)], memo=u64(height))
    body = (cb, *txs)
    try:
        apply_batch(state, body, verify=verify)
    except BatchError as exc:
        raise InvalidBatch(exc) from exc

    if timestamp is None:
        timestamp = (prev.timestamp + BLOCK_INTERVAL_S) if prev is not None else 0
    template = BlockHeader(
        prev_hash=prev.hash if prev is not None else ZERO_HASH,
        merkle_root=merkle_root([tx.txid for tx in body]),
        height=height,
        timestamp=timestamp,
        difficulty_target=min(target, MAX_TARGET),
    )
    prefix = template.serialize()[:-8]
    start = random.Random(rng_seed).getrandbits(64)
    for attempt in range(1, max_attempts + 1):
        nonce = (start + attempt - 1) % 2**64
        if int.from_bytes(sha256d(prefix + u64(nonce)), "big") <= target:
            header = replace(template, nonce=nonce)
            return Block(header, body), attempt
    raise TargetUnreachable(f"no nonce found in {max_attempts} attempts")


def select_chain(candidates: Sequence[Chain]) -> Chain:
    """Greatest cumulative work; ties go to the earliest candidate."""
    if not candidates:
        raise EmptyCandidateSet("no candidate chains")
    return max(candidates, key=lambda c: c.cumulative_work)


# -- adversarial race ----------------------------------------------------------


@dataclass(frozen=True)
class AdversaryModel:
    """Adversary holding fraction ``alpha`` of block production, racing to
    erase an honest lead of ``reorg_depth`` blocks."""

    alpha: float
    reorg_depth: int = 6
    unit_cost: float = 1.0
    resource_bound: float = math.inf
    work_per_block: int = 2**20
    max_lag: int = DEFAULT_MAX_LAG

    def __post_init__(self) -> None:
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if self.reorg_depth < 1:
            raise ValueError("reorg_depth must be >= 1")
        if self.reorg_depth >= self.max_lag:
            raise ValueError("reorg_depth must be below max_lag")


@dataclass(frozen=True)
class RaceEstimate:
    p_hat: float
    mean_cost: float
    p_within_bound: float
    trials: int
    successes: int
    mean_race_blocks: float


_CHUNK = 1 << 14


def catch_up_probability(alpha: float, depth: int) -> float:
    """Closed-form gambler's-ruin catch-up probability with no lag barrier."""
    q, p = alpha, 1 - alpha
    return 1.0 if q >= p else (q / p) ** depth


def reorg_success_probability(model: AdversaryModel, trials: int, rng_seed: int) -> RaceEstimate:
    """Monte-Carlo estimate of the adversary catching up from ``reorg_depth``
    blocks behind before falling ``max_lag`` blocks behind.

    Each race step is one block found by either side (adversary with
    probability ``alpha``). Trials run in fixed-size chunks, chunk ``c`` seeded
    from ``(rng_seed, c)``; chunk results are summed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    successes = cheap_successes = 0
    total_cost = 0.0
    total_steps = 0
    per_block = model.work_per_block * model.unit_cost
    for c, lo in enumerate(range(0, trials, _CHUNK)):
        size = min(_CHUNK, trials - lo)
        rng = np.random.default_rng([rng_seed & (2**64 - 1), c])
        deficit = np.full(size, model.reorg_depth, dtype=np.int64)
        adv_blocks = np.zeros(size, dtype=np.int64)
        steps = np.zeros(size, dtype=np.int64)
        won = np.zeros(size, dtype=bool)
        idx = np.arange(size)
        while idx.size:
            found = rng.random(idx.size) < model.alpha
            deficit[idx] += np.where(found, -1, 1)
            adv_blocks[idx] += found
            steps[idx] += 1
            d = deficit[idx]
            done = (d <= 0) | (d >= model.max_lag)
            won[idx[d <= 0]] = True
            idx = idx[~done]
        cost = adv_blocks * per_block
        successes += int(won.sum())
        cheap_successes += int((won & (cost < model.resource_bound)).sum())
        total_cost += float(cost.sum())
        total_steps += int(steps.sum())
    return RaceEstimate(
        p_hat=successes / trials,
        mean_cost=total_cost / trials,
        p_within_bound=cheap_successes / trials,
        trials=trials,
        successes=successes,
        mean_race_blocks=total_steps / trials,
    )


# -- security predicate ----------------------------------------------------------


@dataclass(frozen=True)
class S1Report:
    holds: bool
    p_hat: float
    mean_cost: float
    p_within_bound: float
    epsilon_sec: float
    corpus_ok: bool
    corpus_error: str | None = None
    blocks_replayed: int = 0
    max_lag: int = DEFAULT_MAX_LAG
    notes: tuple[str, ...] = field(default=("race failure barrier is max_lag blocks behind",))


def build_corpus_chain(
    workload: Workload,
    n_blocks: int,
    txs_per_block: int,
    target: int,
    seed: int,
) -> tuple[LedgerState, Chain]:
    """Mine ``n_blocks`` blocks carrying consecutive slices of ``workload``."""
    genesis, txs = workload.generate(n_blocks * txs_per_block)
    state, chain, prev = genesis, Chain(), None
    for h in range(n_blocks):
        batch = txs[h * txs_per_block:(h + 1) * txs_per_block]
        block, _ = mine_block(state, batch, prev, target, derive_seed(seed, "mine", h))
        state = apply_block(state, block)
        chain = chain.extend(block)
        prev = block.header
    return genesis, chain


def replay_corpus(genesis: LedgerState, batches: Sequence[Sequence[Transaction]]) -> tuple[bool, str | None]:
    """Check that every batch applies and conserves value (the state predicate)."""
    state = genesis
    for k, batch in enumerate(batches):
        try:
            after = apply_batch(state, batch)
            issuance, fees = value_flow(state, batch)
        except LedgerError as exc:
            return False, f"batch {k}: {exc}"
        if after.total_value() != state.total_value() + issuance - fees:
            return False, f"batch {k}: value not conserved"
        state = after
    return True, None


def evaluate_S1(
    config,
    epsilon_sec: float | None = None,
    trials: int | None = None,
    *,
    corpus: tuple[LedgerState, Sequence[Sequence[Transaction]]] | None = None,
    seed: int | None = None,
) -> S1Report:
    """Security leg: the replayed corpus keeps the state predicate, and the
    adversary's chance of a cheap successful reorg is at most ``epsilon_sec``.

    ``config`` is a harness ``ProtocolConfig``. Without an explicit ``corpus``
    a short chain is mined from the config workload, serialized, parsed back
    and replayed from bytes.
    """
    eps = config.security_threshold if epsilon_sec is None else epsilon_sec
    n_trials = config.mc_trials if trials is None else trials
    seed = config.seeds[0] if seed is None else seed

    if corpus is None:
        genesis, chain = build_corpus_chain(
            config.workload_for(seed),
            config.corpus_blocks,
            config.corpus_txs_per_block,
            config.block_target,
            derive_seed(seed, "corpus"),
        )
        parsed = Chain.deserialize(chain.serialize())
        batches = [b.transactions for b in parsed.blocks]
        try:
            validate_chain(parsed, genesis)
            corpus_ok, err = replay_corpus(genesis, batches)
        except (ConsensusError, LedgerError) as exc:
            corpus_ok, err = False, str(exc)
    else:
        genesis, batches = corpus
        corpus_ok, err = replay_corpus(genesis, batches)

    race = reorg_success_probability(config.adversary, n_trials, derive_seed(seed, "race"))
    holds = corpus_ok and race.p_within_bound <= eps
    return S1Report(
        holds=holds,
        p_hat=race.p_hat,
        mean_cost=race.mean_cost,
        p_within_bound=race.p_within_bound,
        epsilon_sec=eps,
        corpus_ok=corpus_ok,
        corpus_error=err,
        blocks_replayed=len(batches),
        max_lag=config.adversary.max_lag,
    )
