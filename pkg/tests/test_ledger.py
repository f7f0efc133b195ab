import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from gen import CORRUPTIONS, World, oracle_entries, oracle_form, secret
from oracles import ListLedger, Reject, tx_bytes, tx_id
from trilemma.ledger import (
    GENESIS,
    VERIFY_ED25519,
    BadWitness,
    BatchError,
    DuplicateOutpoint,
    LedgerState,
    MalformedTransaction,
    MissingInput,
    Outpoint,
    Transaction,
    TxInput,
    TxOutput,
    ValueOverflow,
    Workload,
    apply_batch,
    apply_parallel,
    apply_tx,
    coinbase,
    ed25519_owner,
    owner_for_secret,
    partition_index,
    partition_state,
    peak_utxo_size,
    sign_ed25519,
    tx_ops,
    validation_cost_curve,
    value_flow,
)

K = owner_for_secret(secret(0))


def _oracle_from_state(state):
    return ListLedger(oracle_entries(state))


# -- transactions ----------------------------------------------------------------


def test_coinbase_into_empty_state():
    state = apply_tx(GENESIS, coinbase([TxOutput(50, K)]))
    assert len(state) == 1
    assert [o.value for o in state.utxo.values()] == [50]


def test_spend_of_absent_outpoint_is_missing_input():
    ghost = Outpoint(b"\x11" * 32, 0)
    tx = Transaction((TxInput(ghost, secret(0)),), (TxOutput(1, K),))
    with pytest.raises(MissingInput):
        apply_tx(GENESIS, tx)


def test_three_tx_chain_matches_list_interpreter():
    cb = coinbase([TxOutput(50, K)], memo=b"chain")
    state = apply_tx(GENESIS, cb)
    ref = ListLedger()
    ref.apply(*oracle_form(cb))
    prev, value = cb, 50
    for step in range(3):
        value -= 1
        tx = Transaction((TxInput(Outpoint(prev.txid, 0), secret(0)),), (TxOutput(value, K),), memo=bytes([step]))
        state = apply_tx(state, tx)
        ref.apply(*oracle_form(tx))
        prev = tx
    assert oracle_entries(state) == sorted(ref.entries)
    assert state.state_digest == ref.digest()


def test_txid_matches_hand_serialization():
    w = World(random.Random(1))
    for tx in w.funding + w.batch(20):
        assert tx.serialize() == tx_bytes(*oracle_form(tx))
        assert tx.txid == tx_id(*oracle_form(tx))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_serialization_round_trip(seed):
    w = World(random.Random(seed), n_funding=2)
    for tx in w.funding + w.batch(3):
        again = Transaction.deserialize(tx.serialize())
        assert again == tx
        assert again.txid == tx.txid


def test_deserialize_rejects_truncation_and_trailing_bytes():
    tx = coinbase([TxOutput(5, K)], memo=b"m")
    raw = tx.serialize()
    with pytest.raises(ValueError):
        Transaction.deserialize(raw[:-1])
    with pytest.raises(ValueError):
        Transaction.deserialize(raw + b"\x00")


def test_rejection_kinds():
    cb = coinbase([TxOutput(10, K)])
    state = apply_tx(GENESIS, cb)
    op = Outpoint(cb.txid, 0)
    with pytest.raises(BadWitness):
        apply_tx(state, Transaction((TxInput(op, b"wrong"),), (TxOutput(1, K),)))
    with pytest.raises(ValueOverflow):
        apply_tx(state, Transaction((TxInput(op, secret(0)),), (TxOutput(11, K),)))
    with pytest.raises(MalformedTransaction):
        apply_tx(state, Transaction((), (TxOutput(1, K),)))
    with pytest.raises(MalformedTransaction):
        apply_tx(state, Transaction((TxInput(op, secret(0)),), ()))
    with pytest.raises(MissingInput):
        # same outpoint twice inside one tx
        apply_tx(state, Transaction((TxInput(op, secret(0)), TxInput(op, secret(0))), (TxOutput(1, K),)))
    with pytest.raises(DuplicateOutpoint):
        apply_tx(state, cb)


def test_output_value_bounds():
    with pytest.raises(ValueError):
        TxOutput(0, K)
    with pytest.raises(ValueError):
        TxOutput(2**64, K)


def test_apply_tx_deterministic_and_pure():
    w = World(random.Random(3))
    tx = w.next_tx()
    a = apply_tx(w.genesis, tx)
    b = apply_tx(w.genesis, tx)
    assert a.state_digest == b.state_digest
    assert w.genesis.state_digest == apply_batch(GENESIS, w.funding).state_digest


def test_height_unchanged_by_transactions():
    state = LedgerState({}, height=7)
    assert apply_tx(state, coinbase([TxOutput(1, K)])).height == 7


def test_state_digest_order_independent():
    w = World(random.Random(4))
    items = list(w.genesis.utxo.items())
    assert LedgerState(dict(items)).state_digest == LedgerState(dict(reversed(items))).state_digest


# -- ed25519 mode ----------------------------------------------------------------


def test_ed25519_witnesses():
    from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    key = Ed25519PrivateKey.from_private_bytes(bytes(range(32)))
    pub = key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    cb = coinbase([TxOutput(100, ed25519_owner(pub))])
    state = apply_tx(GENESIS, cb, verify=VERIFY_ED25519)
    unsigned = Transaction((TxInput(Outpoint(cb.txid, 0)),), (TxOutput(90, K),))
    signed = sign_ed25519(unsigned, [key])
    assert len(apply_tx(state, signed, verify=VERIFY_ED25519)) == 1
    forged = signed.inputs[0].witness[:-1] + bytes([signed.inputs[0].witness[-1] ^ 1])
    bad = Transaction((TxInput(signed.inputs[0].outpoint, forged),), signed.outputs)
    with pytest.raises(BadWitness):
        apply_tx(state, bad, verify=VERIFY_ED25519)
    # a signature is bound to the outputs it signed
    moved = Transaction(signed.inputs, (TxOutput(90, owner_for_secret(secret(1))),))
    with pytest.raises(BadWitness):
        apply_tx(state, moved, verify=VERIFY_ED25519)


# -- batches ---------------------------------------------------------------------


def test_empty_batch_is_identity():
    w = World(random.Random(5))
    assert apply_batch(w.genesis, []) == w.genesis


def test_batch_of_two_is_fold():
    w = World(random.Random(6))
    t1, t2 = w.batch(2)
    assert apply_batch(w.genesis, [t1, t2]).state_digest == apply_tx(apply_tx(w.genesis, t1), t2).state_digest


def test_thousand_random_txs_match_reference_digest():
    w = World(random.Random(7), n_funding=8, outs_per_funding=8)
    txs = w.batch(1000)
    assert len(txs) == 1000
    ref = _oracle_from_state(w.genesis)
    for tx in txs:
        ref.apply(*oracle_form(tx))
    assert apply_batch(w.genesis, txs).state_digest == ref.digest()


@pytest.mark.parametrize("kind", CORRUPTIONS)
def test_batch_failure_is_atomic_with_index(kind):
    w = World(random.Random(8))
    txs = w.batch(10)
    bad = w.corrupt(kind)
    txs = txs[:6] + [bad] + txs[6:]
    with pytest.raises(BatchError) as info:
        apply_batch(w.genesis, txs)
    assert info.value.index == 6
    assert info.value.state is w.genesis


@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.sampled_from((None, *CORRUPTIONS)))
@settings(max_examples=60, deadline=None)
def test_totality_agrees_with_reference(seed, n, corruption):
    w = World(random.Random(seed))
    txs = w.batch(n)
    if corruption:
        txs.insert(len(txs) // 2, w.corrupt(corruption))
    ref = _oracle_from_state(w.genesis)
    ref_fail = None
    for i, tx in enumerate(txs):
        try:
            ref.apply(*oracle_form(tx))
        except Reject:
            ref_fail = i
            break
    try:
        state = apply_batch(w.genesis, txs)
    except BatchError as exc:
        assert exc.index == ref_fail
    else:
        assert ref_fail is None
        assert state.state_digest == ref.digest()


def test_value_conservation():
    w = World(random.Random(9))
    txs = w.batch(200)
    txs.append(coinbase([TxOutput(77, K)], memo=b"reward"))
    issuance, fees = value_flow(w.genesis, txs)
    after = apply_batch(w.genesis, txs)
    assert issuance == 77
    assert fees >= 0
    assert after.total_value() == w.genesis.total_value() + issuance - fees


def test_peak_utxo_size():
    w = World(random.Random(10))
    txs = w.batch(50)
    sizes = [len(w.genesis)]
    state = w.genesis
    for tx in txs:
        state = apply_tx(state, tx)
        sizes.append(len(state))
    assert peak_utxo_size(w.genesis, txs) == max(sizes)


# -- partitions ------------------------------------------------------------------


def test_partition_m1_is_whole_set():
    w = World(random.Random(11))
    (only,) = partition_state(w.genesis, 1)
    assert only.members == frozenset(w.genesis.utxo)


def test_partition_m2_disjoint_cover():
    rng = random.Random(12)
    state = LedgerState({Outpoint(rng.randbytes(32), i): TxOutput(1, K) for i in range(4)})
    a, b = partition_state(state, 2)
    assert a.members | b.members == frozenset(state.utxo)
    assert not a.members & b.members


def test_partition_index_is_big_endian_prefix():
    txid = bytes([0, 0, 0, 0, 0, 0, 0, 5]) + b"\xff" * 24
    assert partition_index(txid, 4) == 1
    assert partition_index(txid, 1) == 0


def test_partition_sizes_binomial():
    rng = random.Random(13)
    utxo = {Outpoint(rng.randbytes(32), 0): TxOutput(1, K) for _ in range(10_000)}
    parts = partition_state(LedgerState(utxo), 8)
    n, p = 10_000, 1 / 8
    sigma = math.sqrt(n * p * (1 - p))
    for part in parts:
        assert abs(len(part.members) - n * p) <= 3 * sigma
    assert sum(len(p.members) for p in parts) == n


# -- parallel validation -----------------------------------------------------------


def test_parallel_m1_matches_batch_and_cost():
    w = World(random.Random(14))
    txs = w.batch(100)
    state, cost = apply_parallel(w.genesis, txs, 1)
    assert state.state_digest == apply_batch(w.genesis, txs).state_digest
    assert cost.critical_path == sum(tx_ops(t) for t in txs)
    assert cost.merge_ops == 0 and not cost.fallback


def test_parallel_m4_vs_m2_same_digest():
    genesis, txs = Workload("mixed", seed=2).generate(500)
    a, _ = apply_parallel(genesis, txs, 4)
    b, _ = apply_parallel(genesis, txs, 2)
    assert a.state_digest == b.state_digest == apply_batch(genesis, txs).state_digest


def test_parallel_threads_match_serial():
    genesis, txs = Workload("partitionable", seed=4).generate(800)
    a, ca = apply_parallel(genesis, txs, 4)
    b, cb = apply_parallel(genesis, txs, 4, max_workers=4)
    assert a.state_digest == b.state_digest and ca == cb


@pytest.mark.parametrize("kind", CORRUPTIONS)
def test_parallel_error_surface_matches_batch(kind):
    w = World(random.Random(15))
    txs = w.batch(20)
    txs.insert(13, w.corrupt(kind))
    with pytest.raises(BatchError) as seq:
        apply_batch(w.genesis, txs)
    with pytest.raises(BatchError) as par:
        apply_parallel(w.genesis, txs, 4)
    assert par.value.index == seq.value.index
    assert type(par.value.cause) is type(seq.value.cause)


def test_partitionable_critical_path_speedup():
    genesis, txs = Workload("partitionable", seed=1).generate(10_000)
    _, c1 = apply_parallel(genesis, txs, 1)
    _, c4 = apply_parallel(genesis, txs, 4)
    assert c4.deferred == 0
    assert c4.critical_path <= 0.35 * c1.critical_path


def test_cross_partition_workload_is_deferred():
    genesis, txs = Workload("cross_partition", seed=1).generate(500)
    _, cost = apply_parallel(genesis, txs, 4)
    assert cost.deferred == len(txs)


def test_workload_prefix_stable():
    w = Workload("mixed", seed=3)
    assert w.generate(100)[1] == w.generate(3000)[1][:100]


# -- cost curves ------------------------------------------------------------------


def test_cost_curve_zero():
    assert validation_cost_curve(Workload(), [0], 1) == [(0, 0)]


def test_cost_curve_linear_m1():
    (n1, c1), (n2, c2) = validation_cost_curve(Workload(seed=5), [1000, 10_000], 1)
    assert abs(c2 / c1 - 10) <= 1.0


def test_cost_curve_m4_quarter():
    w = Workload(seed=5)
    one = validation_cost_curve(w, [1000, 10_000], 1)
    four = validation_cost_curve(w, [1000, 10_000], 4)
    for (_, a), (_, b) in zip(one, four):
        assert b <= a / 4 * 1.1


def test_cost_curve_rejects_bad_grid():
    with pytest.raises(ValueError):
        validation_cost_curve(Workload(), [], 1)
    with pytest.raises(ValueError):
        validation_cost_curve(Workload(), [10, 5], 1)
