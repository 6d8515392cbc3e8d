from __future__ import annotations

import math
import random

import numpy as np
import pytest

from conftest import SMALL
from statenet.chain import Block, StateList, StateListEntry
from statenet.merkle import MerkleProof, MerkleTrie, sha256
from statenet.messages import BlockAnnounce, StateResponse
from statenet.state import AccountBundle, AccountRecord, CONTRACT
from statenet.workload.generator import (
    CalibrationError,
    TraceParams,
    gen_trace,
    power_weights,
    sample_code_sizes,
    top_share,
    trace_statistics,
)
from statenet.workload.sizes import (
    HEXARY_A,
    HEXARY_B,
    HEXARY_FIT_NS,
    MERKLE,
    REF_BLOCK_TOTAL,
    REF_BLOCK_WITNESS,
    VERKLE,
    FitError,
    SizeModel,
    VerkleWitnessModel,
    data_size,
    default_verkle_model,
    fit_log_regression,
    measure_hexary_curve,
    message_bytes,
    reference_access_set,
)
from statenet.workload.storage import (
    empirical_replication,
    monte_carlo_loss,
    savings_from_fractions,
    storage_savings,
)
from statenet.workload.trace import (
    AccessTrace,
    TraceParseError,
    TraceSchemaError,
    emit_trace,
    parse_trace,
    read_trace,
    write_trace,
)

# ------------------------------------------------------------ generator


def test_default_trace_calibration(default_trace):
    _, rep = default_trace
    assert rep.accesses >= 90_000
    assert 0.42 <= rep.top100_share <= 0.48
    assert abs(rep.slots_per_tx - 9.45) / 9.45 < 0.05
    assert abs(rep.code_access_mean - 9692) / 9692 <= 0.15
    assert abs(rep.dedup_ratio - 0.90) < 0.02
    assert abs(rep.low_touch_fraction - 2 / 3) <= 0.05


def test_trace_statistics_agree_with_report(default_trace):
    trace, rep = default_trace
    stats = trace_statistics(trace)
    assert stats["top100_share"] == pytest.approx(rep.top100_share, abs=0.01)
    assert stats["slots_per_tx"] == pytest.approx(rep.slots_per_tx, rel=1e-9)
    assert stats["code_access_mean"] == pytest.approx(9692, rel=0.15)


def test_code_population_mean():
    c = sample_code_sizes(100_000, 1)
    assert abs(c.population_mean - 1630) / 1630 <= 0.10
    assert abs(c.dedup_ratio - 0.90) < 0.01


def test_uniform_skew_share():
    w = power_weights(5000, 0.0)
    # enough draws that the top-100 order statistic sits close to the mean
    hits = np.random.default_rng(1).multinomial(20_000_000, w)
    assert top_share(hits) == pytest.approx(100 / 5000, rel=0.1)


def test_generator_deterministic():
    a, _ = gen_trace(SMALL, 5)
    b, _ = gen_trace(SMALL, 5)
    assert emit_trace(a) == emit_trace(b)
    c, _ = gen_trace(SMALL, 6)
    assert emit_trace(a) != emit_trace(c)


def test_calibration_errors():
    with pytest.raises(CalibrationError):
        gen_trace(TraceParams(accounts=2), 1)
    with pytest.raises(CalibrationError):
        gen_trace(TraceParams(accounts=50_000, width=16), 1)
    with pytest.raises(CalibrationError) as e:
        gen_trace(TraceParams(accounts=2000, blocks=5, txs_per_block=10), 1)
    assert e.value.target == "low_touch_fraction"


# ---------------------------------------------------------------- trace


def test_trace_roundtrip(small_trace, tmp_path):
    p = tmp_path / "t.csv"
    write_trace(small_trace, p)
    back = read_trace(p)
    assert back == small_trace
    assert p.read_text() == emit_trace(back)


def test_empty_trace():
    t = parse_trace("# statenet-trace/1 width=16\n")
    assert t == AccessTrace(16, [])
    assert list(t.blocks()) == []


def test_trace_schema_errors():
    head = "# statenet-trace/1 width=8\n"
    with pytest.raises(TraceSchemaError) as e:
        parse_trace(head + "0,0,read_account,0a,,60\n0,0,read_account,1ff,,60\n")
    assert e.value.line == 3
    with pytest.raises(TraceParseError):
        parse_trace("block,tx,op\n")
    with pytest.raises(TraceParseError):
        parse_trace(head + "0,0,teleport,0a,,60\n")
    with pytest.raises(TraceSchemaError):
        parse_trace(head + "1,0,read_account,0a,,60\n0,0,read_account,0a,,60\n")
    with pytest.raises(TraceSchemaError):
        parse_trace(head + "0,0,write_account,0a,07,60\n")


def test_trace_universe_and_transactions(small_trace):
    u = small_trace.universe()
    assert set(u.code_ids) <= {a for a, k in u.kinds.items() if k == "contract"}
    blocks = list(small_trace.transactions())
    assert len(blocks) == SMALL.blocks
    assert all(len(txs) == SMALL.txs_per_block for _, txs in blocks)


# ------------------------------------------------------------- sizes


def test_log_fit_exact_and_constant():
    fit = fit_log_regression([(n, 10 + 5 * math.log(n)) for n in (10, 100, 1000, 10_000)])
    assert fit.a == pytest.approx(10) and fit.b == pytest.approx(5) and fit.r_squared == pytest.approx(1)
    flat = fit_log_regression([(n, 7.0) for n in (10, 100, 1000)])
    assert flat.b == pytest.approx(0, abs=1e-9)
    with pytest.raises(FitError):
        fit_log_regression([(10, 1.0)])


def test_hexary_constants_refit():
    fit = fit_log_regression(measure_hexary_curve(HEXARY_FIT_NS, seed=1))
    assert fit.a == pytest.approx(HEXARY_A, abs=0.01)
    assert fit.b == pytest.approx(HEXARY_B, abs=0.01)


def test_binary_proof_sizes_are_logarithmic():
    rng = random.Random(1)
    samples = []
    for e in range(8, 16):
        n = 2**e
        keys = rng.sample(range(2**32), n)
        trie = MerkleTrie.from_items(32, [(k, sha256(k.to_bytes(4, "big"))) for k in keys])
        probe = keys[:200]
        samples.append((n, sum(trie.prove(k).wire_size for k in probe) / len(probe)))
    assert fit_log_regression(samples).r_squared >= 0.98


def test_response_size_binary_layout():
    model = SizeModel(proof_layout="binary")
    # depth-20 proofs with every sibling present: 20 digests plus framing
    proof_bytes = 20 * 32 + 2 + 3
    sib = tuple(bytes([i]) * 32 for i in range(20))
    aproof = MerkleProof(1, 20, sib, 1, sha256(b"x"), b"r" * 32)
    sproof = MerkleProof(2, 20, sib, 2, sha256(b"y"), b"s" * 32)
    rec = AccountRecord(1, CONTRACT)
    resp = StateResponse(1, [AccountBundle(1, rec, aproof, [(2, b"\0" * 32, sproof)])])
    m = message_bytes(resp, MERKLE, model).split
    assert m["headers"] == 124 and m["slot_data"] == 64
    assert m["account_proofs"] == proof_bytes and m["slot_proofs"] == proof_bytes
    v = message_bytes(resp, VERKLE, model).split
    assert "account_proofs" not in v and "slot_proofs" not in v


def test_verkle_same_stem_discount_and_monotone():
    model = VerkleWitnessModel(per_stem=100.0)
    assert model.witness_bytes([256]) - model.witness_bytes([1]) == 32
    sizes = [model.witness_bytes([1] * n) for n in range(10)]
    assert sizes == sorted(sizes)
    with pytest.raises(ValueError):
        model.witness_bytes([257])


def test_verkle_reference_block_calibration():
    model = default_verkle_model()
    for seed in (None, 1, 2):
        sl = reference_access_set(seed)
        witness = model.for_state_list(sl)
        total = witness + data_size(sl).total
        assert abs(witness / REF_BLOCK_WITNESS - 1) <= 0.10
        assert abs(total / REF_BLOCK_TOTAL - 1) <= 0.10
    ann = BlockAnnounce(Block(1, 0, b"", b""), reference_access_set())
    assert message_bytes(ann, VERKLE).split["witness"] == model.for_state_list(ann.state_list)
    assert "witness" not in message_bytes(ann, MERKLE).split


def test_data_size_dedups_code():
    h = b"h" * 32
    sl = StateList((StateListEntry(1, "contract", (1, 2), True, h, 500), StateListEntry(2, "contract", (), True, h, 500)))
    d = data_size(sl).split
    assert d == {"headers": 248, "slot_data": 128, "code": 500}


# ------------------------------------------------------------- storage


def test_storage_trivial_cases():
    assert storage_savings([0] * 10) == (0.0, 0.0)
    assert storage_savings([0]) == (0.0, 0.0)
    with pytest.raises(ValueError):
        savings_from_fractions([])


def test_storage_closed_form_and_monte_carlo():
    fractions = [0.02] * 1000
    r = savings_from_fractions(fractions)
    assert r.loss_probability == pytest.approx(0.98**1000, rel=1e-9)
    assert 1.0e-9 <= r.loss_probability <= 3e-9
    assert r.savings == pytest.approx(0.98)
    # a loss rate of 1e-9 is invisible to 1e6 trials; use a fraction where it is not
    f = [0.005] * 1000
    loss, savings, se = monte_carlo_loss(f, trials=1_000_000, seed=2)
    exact = savings_from_fractions(f)
    assert abs(loss - exact.loss_probability) <= 3 * se
    assert savings == pytest.approx(exact.savings, abs=1e-3)


def test_replication_histogram_mean():
    counts = empirical_replication(1000, 4, width=32, n_items=5000, seed=3)
    expected = 1000 * 2**-4
    assert abs(counts.mean() - expected) <= 3 * math.sqrt(expected / 5000) * 3
