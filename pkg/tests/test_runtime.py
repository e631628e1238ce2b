import json

import numpy as np
import pytest

from fedstat.binning import ExtremePolicy, GroupedSample
from fedstat.errors import PrivacyViolation
from fedstat.join import audit_transcript, build_federated_table
from fedstat.quantiles import (
    estimate_quantile_loss,
    estimate_quantile_yj_data,
    estimate_quantile_yj_table,
    fit_yj_mle,
    fit_yj_table,
)
from fedstat.ranktests import center_stat, fisher_from_stats, mwu_federated_table, t_sum, t_weighted
from fedstat.runtime import (
    Coordinator,
    Message,
    make_federation,
    run_mwu_protocol,
    run_quantile_protocol,
    run_table_protocol,
)

from leakscan import leaking_kinds, sentinel_centers


def federation_data(seed, L=4, skew=False):
    r = np.random.default_rng(seed)
    out = []
    for l in range(L):
        n, m = int(r.integers(20, 150)), int(r.integers(20, 150))
        if skew:
            out.append(GroupedSample(r.gamma(3, 1, n), r.gamma(3, 1.2, m), f"c{l}"))
        else:
            out.append(GroupedSample(r.normal(0, 1, n), r.normal(0.2, 1, m), f"c{l}"))
    return out


def kinds(coord, direction=None):
    return [json.loads(r.text)["kind"] for r in coord.log if direction in (None, r.direction)]


# --- wire ----------------------------------------------------------------


def test_message_round_trip_and_kinds():
    m = Message("loss_query", 3, "a", {"queries": [[0.5, 1.25]], "hi": float("inf")})
    back = Message.from_wire(m.to_wire())
    assert back.kind == "loss_query" and back.round == 3 and back.payload["hi"] == "+inf"
    with pytest.raises(ValueError):
        Message("gossip", 1, "a", {})


def test_duplicate_center_ids_rejected():
    s = GroupedSample([1.0] * 20, [], "a")
    with pytest.raises(ValueError):
        make_federation([s, s])


# --- table ---------------------------------------------------------------


@pytest.mark.parametrize("seed", range(8))
def test_table_protocol_equals_in_process(seed):
    centers = federation_data(seed, L=1 + seed % 5)
    coord = make_federation(centers, 10, seed=seed)
    res = run_table_protocol(coord)
    ref = build_federated_table(centers, 10, seed=seed)
    assert res.table == ref.table
    assert res.transcript.to_list() == ref.transcript.to_list()
    assert coord.rounds == len(centers)
    assert kinds(coord, "out") == ["table_init_request"] + ["table_join_request"] * (len(centers) - 1)
    assert audit_transcript(res.transcript, 10).passed


def test_table_protocol_policies_and_order():
    centers = federation_data(11)
    for pol in (ExtremePolicy("infinite"), ExtremePolicy("natural"), ExtremePolicy("buffer", 0.0)):
        got = run_table_protocol(make_federation(centers, 10, seed=1), pol).table
        assert got == build_federated_table(centers, 10, seed=1, policy=pol).table
    got = run_table_protocol(make_federation(centers, 10, seed=1), order="given").table
    assert got == build_federated_table(centers, 10, seed=1, order="given").table


def test_single_node_one_exchange():
    coord = make_federation(federation_data(0, L=1), 10)
    run_table_protocol(coord)
    assert [r.direction for r in coord.log] == ["out", "in"]


# --- tests ---------------------------------------------------------------


@pytest.mark.parametrize("sided", ["two", "greater", "less"])
def test_mwu_protocol_equals_in_process(sided):
    centers = federation_data(3)
    stats = [center_stat(c, sided) for c in centers]
    expect = {"sum": t_sum(stats, sided), "weighted": t_weighted(stats, sided), "fisher": fisher_from_stats(stats, sided)}
    for method, ref in expect.items():
        coord = make_federation(centers, 10)
        assert run_mwu_protocol(coord, method, sided) == ref
        assert coord.rounds == 1
        assert len(kinds(coord, "out")) == len(centers)
    coord = make_federation(centers, 10, seed=5)
    got = run_mwu_protocol(coord, "federated_table", sided)
    assert got == mwu_federated_table(build_federated_table(centers, 10, seed=5).table, sided)


def test_concurrent_round_is_deterministic():
    centers = federation_data(4, L=6)
    a = make_federation(centers, 10, workers=1)
    b = make_federation(centers, 10, workers=4)
    assert run_mwu_protocol(a, "weighted") == run_mwu_protocol(b, "weighted")
    assert [r.text for r in a.log] == [r.text for r in b.log]


# --- quantiles -----------------------------------------------------------

PROBS = [0.02, 0.25, 0.5, 0.75, 0.98]


def test_loss_protocol_equals_in_process_and_rounds():
    centers = federation_data(5, skew=True)
    coord = make_federation(centers, 10)
    got, _ = run_quantile_protocol(coord, "loss", PROBS)
    ref = estimate_quantile_loss([c.x for c in centers], PROBS)
    assert [e.value for e in got] == [e.value for e in ref]
    assert all(e.privacy_flag == "privacy_violating" for e in got)
    assert got[0].communication_rounds == coord.rounds <= 64


def test_mle_protocol_equals_in_process_and_rounds():
    centers = federation_data(6, skew=True)
    for method, mode in (("yj-mle", "iterative"), ("yj-mle-grid", "grid")):
        coord = make_federation(centers, 10)
        got, fit = run_quantile_protocol(coord, method, PROBS)
        ref = fit_yj_mle([c.x for c in centers], mode)
        assert (fit.lmbda, fit.location, fit.scale) == (ref.lmbda, ref.location, ref.scale)
        assert [e.value for e in got] == [estimate_quantile_yj_data(ref, p).value for p in PROBS]
        assert coord.rounds == fit.communication_rounds
        if mode == "grid":
            assert coord.rounds == 2


def test_mle_iterative_rounds_are_evaluations_plus_one():
    centers = federation_data(7, skew=True)
    coord = make_federation(centers, 10)
    run_quantile_protocol(coord, "yj-mle", [0.5])
    requests = [json.loads(r.text) for r in coord.log if r.direction == "out"]
    per_round = {}
    for m in requests:
        per_round.setdefault(m["round"], []).append(len(m["payload"]["lambdas"]))
    # every round but the last evaluates the likelihood at one lambda; the last fetches mean and spread
    assert len(per_round) == coord.rounds
    assert all(v == [1] * len(centers) for v in per_round.values())


def test_yj_table_protocol_equals_in_process():
    centers = federation_data(8, skew=True)
    coord = make_federation(centers, 10, seed=2)
    got, (fit, res) = run_quantile_protocol(coord, "yj-table", PROBS, group="x")
    one = [GroupedSample(c.x, [], c.center_id) for c in centers]
    ref_fit = fit_yj_table(build_federated_table(one, 10, seed=2).table)
    assert fit == ref_fit
    assert [e.value for e in got] == [estimate_quantile_yj_table(ref_fit, p).value for p in PROBS]
    assert coord.rounds == len(centers) == got[0].communication_rounds
    assert all(e.privacy_flag == "k_anonymous" for e in got)


def test_forbid_privacy_violating():
    coord = make_federation(federation_data(9), 10, forbid_privacy_violating=True)
    with pytest.raises(PrivacyViolation):
        run_quantile_protocol(coord, "loss", [0.5])
    assert coord.log == []
    run_quantile_protocol(coord, "yj-mle-grid", [0.5])


# --- boundary honesty ------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_sentinels_leak_only_through_loss_responses(seed):
    r = np.random.default_rng(100 + seed)
    k = int(r.choice([5, 10, 20]))
    centers, sentinels = sentinel_centers(r, int(r.integers(1, 6)), k, ties=seed % 2 == 1, skew=seed % 3 == 0)
    coord = make_federation(centers, k, seed=seed)
    res = run_table_protocol(coord)
    assert audit_transcript(res.transcript, k).passed
    if all(len(c.y) for c in centers):
        for method in ("sum", "weighted", "fisher"):
            run_mwu_protocol(coord, method)
    for method in ("yj-table", "yj-mle", "yj-mle-grid", "loss"):
        run_quantile_protocol(coord, method, PROBS, group="all")
    leaks = leaking_kinds([w.text for w in coord.log], sentinels)
    assert leaks == {"loss_response"}


def test_scan_detects_a_planted_leak():
    centers, sentinels = sentinel_centers(np.random.default_rng(0), 2, 10)
    coord = make_federation(centers, 10)
    v = next(iter(sentinels))
    coord.request(coord.nodes[0], "moment_request", {"lambdas": [v]})
    assert "moment_request" in leaking_kinds([w.text for w in coord.log], sentinels)


def test_dump_transcript(tmp_path):
    coord = make_federation(federation_data(10), 10)
    res = run_table_protocol(coord)
    path = tmp_path / "t.json"
    coord.dump_transcript(str(path), res.transcript)
    doc = json.loads(path.read_text())
    assert len(doc["messages"]) == len(coord.log)
    assert len(doc["transcript"]) == len(res.transcript)
