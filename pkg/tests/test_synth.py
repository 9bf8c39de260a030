"""Synthetic population generator and detection-quality evaluation."""

from __future__ import annotations

import pytest

from ringwatch.attributes import ABSENT
from ringwatch.ccengine import union_find_cc
from ringwatch.edges import BlockingIndex, generate_candidates, heuristic_edges, update_blocking_index
from ringwatch.synth import (
    GroundTruth,
    PopulationSpec,
    evaluate,
    events_to_ndjson,
    generate,
    labeled_edge_samples,
    records_from_events,
    truth_from_tsv,
)


def test_no_rings_all_benign():
    events, truth = generate(PopulationSpec(users=100, rings=0, family_rate=0.0, seed=1))
    assert len(events) == 100
    assert truth.true_pairs() == set()
    assert truth.rings == {}


def test_forced_ip_reuse_shares_one_ip():
    spec = PopulationSpec(
        users=10,
        rings=1,
        ring_size_fixed=4,
        reuse={"ip": 1.0, "device_id": 0.0, "bank_hash": 0.0, "dob_hash": 0.0, "referral_code": 0.0},
        family_rate=0.0,
        seed=2,
    )
    events, truth = generate(spec)
    (members,) = truth.rings.values()
    assert len(members) == 4
    by_id = {e.user_id: e for e in events}
    latest_ips = set()
    for m in members:
        entries = by_id[m].attributes["ip"]
        latest = max(entries, key=lambda ev: (ev[1], ev[0]))
        latest_ips.add(latest[0])
    assert len(latest_ips) == 1


def test_fixed_seed_byte_identical():
    spec_a = PopulationSpec(users=500, rings=10, seed=77)
    spec_b = PopulationSpec(users=500, rings=10, seed=77)
    ev_a, truth_a = generate(spec_a)
    ev_b, truth_b = generate(spec_b)
    assert events_to_ndjson(ev_a) == events_to_ndjson(ev_b)
    assert truth_a.to_tsv() == truth_b.to_tsv()
    ev_c, _ = generate(PopulationSpec(users=500, rings=10, seed=78))
    assert events_to_ndjson(ev_c) != events_to_ndjson(ev_a)


def test_infeasible_spec_rejected():
    with pytest.raises(ValueError, match="infeasible"):
        generate(PopulationSpec(users=10, rings=5, ring_size_fixed=4))


def test_events_in_timestamp_order():
    events, _ = generate(PopulationSpec(users=300, rings=5, seed=3))
    times = [e.registered_at for e in events]
    assert times == sorted(times)
    assert len({e.user_id for e in events}) == len(events)


def test_truth_tsv_round_trip():
    _, truth = generate(PopulationSpec(users=400, rings=8, seed=4, family_rate=0.02))
    parsed = truth_from_tsv(truth.to_tsv())
    assert parsed.ring_of == truth.ring_of
    assert parsed.rings == truth.rings
    assert parsed.family_groups == truth.family_groups


def test_planted_ring_realizability(schema):
    # Sanity oracle: with reuse >= 0.9 and ring size >= 3, exact-match
    # heuristics connect every ring into a single component.
    spec = PopulationSpec(
        users=600,
        rings=12,
        ring_size_fixed=4,
        reuse={"ip": 0.95, "device_id": 0.9, "bank_hash": 0.9, "dob_hash": 0.9, "referral_code": 0.9},
        family_rate=0.0,
        seed=5,
    )
    events, truth = generate(spec)
    records = records_from_events(events, schema)
    index = BlockingIndex(schema)
    edges = []
    store = {}
    for e in events:
        record = records[e.user_id]
        cands = generate_candidates(record, index)
        edges.extend(x.pair for x in heuristic_edges(record, cands, store, schema))
        update_blocking_index(record, index)
        store[e.user_id] = record
    labels = union_find_cc(edges, nodes=records)
    for members in truth.rings.values():
        reps = {labels[m] for m in members}
        assert len(reps) == 1


def test_family_groups_share_device(schema):
    events, truth = generate(PopulationSpec(users=800, rings=0, family_rate=0.02, seed=6))
    assert truth.family_groups
    records = records_from_events(events, schema)
    for group in truth.family_groups:
        devices = {records[u].attrs["device_id"] for u in group}
        assert len(devices) == 1
        assert ABSENT not in devices


def test_labeled_edge_samples_classes(schema):
    events, truth = generate(PopulationSpec(users=1000, rings=15, seed=7, family_rate=0.02))
    records = records_from_events(events, schema)
    samples = labeled_edge_samples(records, truth, schema, seed=1, negative_ratio=2.0)
    pos = [s for s in samples if s.label == 1]
    neg = [s for s in samples if s.label == 0]
    assert pos and neg
    assert len(neg) == 2 * len(pos)
    true_pairs = truth.true_pairs()
    for s in pos:
        a, b = map(int, s.fv.edge_id.split("-"))
        assert (min(a, b), max(a, b)) in true_pairs
    for s in neg:
        a, b = map(int, s.fv.edge_id.split("-"))
        assert (min(a, b), max(a, b)) not in true_pairs


# -- evaluate -------------------------------------------------------------------


def toy_truth():
    truth = GroundTruth()
    truth.rings = {0: [1, 2, 3], 1: [10, 11]}
    truth.ring_of = {1: 0, 2: 0, 3: 0, 10: 1, 11: 1}
    return truth


def test_perfect_detection():
    truth = toy_truth()
    assignments = {1: 1, 2: 1, 3: 1, 10: 10, 11: 10, 50: 50}
    actions = {1: "auto_block", 10: "queued_manual"}
    result = evaluate(assignments, actions, truth)
    assert result["auto"]["precision"] == 1.0
    assert result["manual"]["precision"] == 1.0
    assert result["combined_recall"] == 1.0
    assert result["pairwise"]["precision"] == 1.0


def test_zero_highlights():
    truth = toy_truth()
    assignments = {1: 1, 2: 1, 3: 1, 10: 10, 11: 10}
    result = evaluate(assignments, {}, truth)
    assert result["auto"]["precision"] is None
    assert result["auto"]["recall"] == 0.0
    assert result["combined_recall"] == 0.0


def test_one_wrong_in_ten_hand_counted():
    truth = GroundTruth()
    assignments = {}
    actions = {}
    for ring in range(9):  # 9 true rings, highlighted correctly
        members = [100 * ring + 1, 100 * ring + 2]
        truth.rings[ring] = members
        for m in members:
            truth.ring_of[m] = ring
            assignments[m] = members[0]
        actions[members[0]] = "queued_manual"
    # one benign pair wrongly highlighted
    assignments[5000] = 5000
    assignments[5001] = 5000
    actions[5000] = "queued_manual"
    result = evaluate(assignments, actions, truth)
    assert result["manual"]["highlighted"] == 10
    assert result["manual"]["true_positives"] == 9
    assert result["manual"]["precision"] == pytest.approx(0.9)


def test_purity_threshold_applies():
    truth = toy_truth()
    # cluster mixes ring 0 with two benign users: purity 3/5 < 0.9
    assignments = {1: 1, 2: 1, 3: 1, 700: 1, 701: 1, 10: 10, 11: 10}
    actions = {1: "auto_block"}
    result = evaluate(assignments, actions, truth)
    assert result["auto"]["true_positives"] == 0
    assert result["auto"]["precision"] == 0.0


def test_id_mismatch_rejected():
    truth = toy_truth()
    with pytest.raises(ValueError, match="id mismatch"):
        evaluate({1: 1}, {}, truth)  # ring users missing
    with pytest.raises(ValueError, match="id mismatch"):
        evaluate(
            {1: 1, 2: 1, 3: 1, 10: 10, 11: 10}, {999: "auto_block"}, truth
        )
