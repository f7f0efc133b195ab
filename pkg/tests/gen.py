"""Random transaction batches for property tests."""

from __future__ import annotations

import hashlib
import random

from trilemma.ledger import (
    GENESIS,
    Outpoint,
    Transaction,
    TxInput,
    TxOutput,
    apply_batch,
    coinbase,
    owner_for_secret,
)

CORRUPTIONS = ("double_spend", "missing", "bad_witness", "overflow")


def secret(i: int) -> bytes:
    return hashlib.sha256(f"test-key-{i}".encode()).digest()


class World:
    """A funded genesis state plus a pool of spendable outputs."""

    def __init__(self, rng: random.Random, n_funding: int = 4, outs_per_funding: int = 4, n_keys: int = 8):
        self.rng = rng
        self.secrets = [secret(i) for i in range(n_keys)]
        self.pool: list[tuple[Outpoint, int, bytes]] = []
        self.spent: list[tuple[Outpoint, int, bytes]] = []
        funding = []
        for k in range(n_funding):
            outs = []
            for _ in range(outs_per_funding):
                s = rng.choice(self.secrets)
                outs.append(TxOutput(rng.randint(1_000, 1_000_000), owner_for_secret(s)))
            cb = coinbase(outs, memo=f"fund-{k}-{rng.random()}".encode())
            funding.append(cb)
            for i, o in enumerate(cb.outputs):
                self.pool.append((Outpoint(cb.txid, i), o.value, self._secret_of(o.owner)))
        self.funding = funding
        self.genesis = apply_batch(GENESIS, funding)

    def _secret_of(self, owner: bytes) -> bytes:
        return next(s for s in self.secrets if owner_for_secret(s) == owner)

    def next_tx(self, max_in: int = 3, max_out: int = 3) -> Transaction:
        rng = self.rng
        k = rng.randint(1, min(max_in, len(self.pool)))
        picks = rng.sample(range(len(self.pool)), k)
        chosen = [self.pool[j] for j in picks]
        for j in sorted(picks, reverse=True):
            self.spent.append(self.pool.pop(j))
        total = sum(v for _, v, _ in chosen)
        n_out = rng.randint(1, max_out)
        fee = rng.randint(0, min(10, total - n_out)) if total > n_out else 0
        budget = total - fee
        n_out = min(n_out, budget)
        cuts = sorted(rng.sample(range(1, budget), n_out - 1)) if n_out > 1 else []
        values = [b - a for a, b in zip([0, *cuts], [*cuts, budget])]
        owners = [rng.choice(self.secrets) for _ in values]
        tx = Transaction(
            tuple(TxInput(op, s) for op, _, s in chosen),
            tuple(TxOutput(v, owner_for_secret(s)) for v, s in zip(values, owners)),
            False,
            rng.randbytes(4),
        )
        for i, (v, s) in enumerate(zip(values, owners)):
            self.pool.append((Outpoint(tx.txid, i), v, s))
        return tx

    def batch(self, n: int) -> list[Transaction]:
        out = []
        for _ in range(n):
            if not self.pool:
                break
            out.append(self.next_tx())
        return out

    def corrupt(self, kind: str) -> Transaction:
        """A transaction that must be rejected against the current pool."""
        rng = self.rng
        owner = owner_for_secret(self.secrets[0])
        if kind == "double_spend" and self.spent:
            op, v, s = rng.choice(self.spent)
            return Transaction((TxInput(op, s),), (TxOutput(1, owner),), False, b"ds")
        if kind == "bad_witness" and self.pool:
            op, v, s = rng.choice(self.pool)
            return Transaction((TxInput(op, s + b"x"),), (TxOutput(1, owner),), False, b"bw")
        if kind == "overflow" and self.pool:
            op, v, s = rng.choice(self.pool)
            return Transaction((TxInput(op, s),), (TxOutput(v + 1, owner),), False, b"of")
        ghost = Outpoint(hashlib.sha256(rng.randbytes(8)).digest(), 0)
        return Transaction((TxInput(ghost, self.secrets[0]),), (TxOutput(1, owner),), False, b"ms")


def oracle_form(tx: Transaction):
    """(inputs, outputs, coinbase, memo) in the tuple form oracles.ListLedger expects."""
    return (
        [(i.outpoint.txid, i.outpoint.index, i.witness) for i in tx.inputs],
        [(o.value, o.owner) for o in tx.outputs],
        tx.is_coinbase,
        tx.memo,
    )


def oracle_entries(state):
    return sorted((op.txid, op.index, out.value, out.owner) for op, out in state.utxo.items())
