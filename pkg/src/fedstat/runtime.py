"""In-process federation: isolated centers behind a JSON message boundary.

Every request and response is encoded to its wire form and decoded again
before delivery, so nothing but serialized payloads ever reaches the other
side.  The coordinator keeps a log of all wire messages; that log is what the
privacy checks scan.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .binning import DEFAULT_K, ExtremePolicy, GroupedSample, SummaryTable, bin_single_center
from .errors import PrivacyViolation
from .join import (
    CenterRelease,
    JoinResult,
    ReleaseTranscript,
    apply_release,
    center_rng,
    initial_records,
    student_release,
)
from .quantiles import (
    QuantileEstimate,
    center_loss_answers,
    center_moments,
    center_range,
    combine_moments,
    estimate_quantile_yj_data,
    estimate_quantile_yj_table,
    estimate_quantiles_loss,
    fit_yj_mle_query,
    fit_yj_table,
)
from .ranktests import (
    CenterTestStat,
    CombinedTestResult,
    center_stat,
    fisher_from_stats,
    mwu_federated_table,
    t_sum,
    t_weighted,
)

MESSAGE_KINDS = (
    "table_init_request", "table_join_request", "table_response",
    "mwu_stat_request", "mwu_stat_response",
    "loss_query", "loss_response",
    "moment_request", "moment_response",
    "minmax_probe", "minmax_buffer_response",
)
RESPONSE_KINDS = {
    "table_init_request": "table_response",
    "table_join_request": "table_response",
    "mwu_stat_request": "mwu_stat_response",
    "loss_query": "loss_response",
    "moment_request": "moment_response",
}
QUANTILE_METHODS = ("loss", "yj-table", "yj-mle", "yj-mle-grid")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not serializable: {type(v)}")


def _encode_inf(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "+inf" if obj > 0 else "-inf"
    if isinstance(obj, dict):
        return {k: _encode_inf(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode_inf(v) for v in obj]
    return obj


@dataclass(frozen=True)
class Message:
    kind: str
    round: int
    center: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")

    def to_wire(self) -> str:
        body = {"kind": self.kind, "round": self.round, "center": self.center,
                "payload": _encode_inf(self.payload)}
        return json.dumps(body, default=_json_default, allow_nan=False)

    @classmethod
    def from_wire(cls, text: str) -> "Message":
        d = json.loads(text)
        return cls(d["kind"], int(d["round"]), str(d["center"]), d["payload"])


class CenterNode:
    """A data-holding center; answers requests from its private sample only."""

    def __init__(self, sample: GroupedSample, k: int = DEFAULT_K, seed: int = 0):
        self._sample = sample
        self.center_id = sample.center_id
        self.k = int(k)
        self._seed = int(seed)

    @property
    def declared_size(self) -> int:
        """Total observation count, which centers disclose for join ordering."""
        return self._sample.size

    def group_size(self, group: Optional[str] = None) -> int:
        """Declared size of the data a table request with ``group`` would use."""
        return self.declared_size if group is None else len(self._values(group))

    def _values(self, group: str) -> np.ndarray:
        s = self._sample
        if group == "x":
            return s.x
        if group == "y":
            return s.y
        return s.pooled()

    def _one_group(self, group):
        if group is None:
            return self._sample
        return GroupedSample(self._values(group), [], self.center_id)

    def handle_wire(self, text: str) -> str:
        msg = Message.from_wire(text)
        return self.handle(msg).to_wire()

    def handle(self, msg: Message) -> Message:
        p = msg.payload
        kind = msg.kind
        if kind == "table_init_request":
            policy = _policy_from(p.get("policy"))
            table = bin_single_center(self._one_group(p.get("group")), p.get("k", self.k),
                                      center_rng(self._seed, self.center_id), policy)
            out = {"table": table.to_dict()}
        elif kind == "table_join_request":
            policy = _policy_from(p.get("policy"))
            table = SummaryTable.from_dict(p["table"])
            rel = student_release(table, self._one_group(p.get("group")),
                                  center_rng(self._seed, self.center_id), policy)
            out = {"release": rel.to_dict()}
        elif kind == "mwu_stat_request":
            out = {"stat": center_stat(self._sample, p.get("sidedness", "two")).to_dict()}
        elif kind == "loss_query":
            values = self._values(p.get("group", "x"))
            if p.get("range"):
                out = center_range(values)
            else:
                out = center_loss_answers(values, [tuple(q) for q in p["queries"]])
        elif kind == "moment_request":
            out = center_moments(self._values(p.get("group", "x")), p["lambdas"])
        else:
            raise ValueError(f"center cannot handle {kind!r}")
        return Message(RESPONSE_KINDS[kind], msg.round, self.center_id, out)


def _policy_from(d) -> ExtremePolicy:
    if not d:
        return ExtremePolicy()
    low = d.get("low", -math.inf)
    high = d.get("high", math.inf)
    low = -math.inf if low in ("-inf", None) else float(low)
    high = math.inf if high in ("+inf", None) else float(high)
    return ExtremePolicy(d.get("kind", "buffer"), low, high)


def _policy_to(policy: ExtremePolicy) -> dict:
    return {"kind": policy.kind, "low": policy.low, "high": policy.high}


@dataclass
class WireRecord:
    direction: str  # "out" to a center, "in" from a center
    text: str

    def message(self) -> Message:
        return Message.from_wire(self.text)


class Coordinator:
    """Holds estimator logic, no raw data; talks to nodes through the wire."""

    def __init__(self, nodes: Sequence[CenterNode], k: int = DEFAULT_K,
                 forbid_privacy_violating: bool = False, workers: int = 1):
        ids = [n.center_id for n in nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("center ids must be unique")
        self.given_order = list(nodes)
        self.nodes = sorted(nodes, key=lambda n: n.center_id)
        self.k = int(k)
        self.forbid_privacy_violating = forbid_privacy_violating
        self.workers = workers
        self.rounds = 0
        self.log: List[WireRecord] = []

    # transport

    def _exchange(self, node: CenterNode, msg: Message) -> Message:
        out = msg.to_wire()
        self.log.append(WireRecord("out", out))
        back = node.handle_wire(out)
        self.log.append(WireRecord("in", back))
        return Message.from_wire(back)

    def request(self, node: CenterNode, kind: str, payload: dict) -> Message:
        self.rounds += 1
        return self._exchange(node, Message(kind, self.rounds, node.center_id, payload))

    def broadcast(self, kind: str, payload: dict) -> List[Message]:
        """One round to every node; replies in center-id order."""
        self.rounds += 1
        msgs = [Message(kind, self.rounds, n.center_id, payload) for n in self.nodes]
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                outs = [m.to_wire() for m in msgs]
                backs = list(ex.map(lambda a: a[0].handle_wire(a[1]), zip(self.nodes, outs)))
            replies = []
            for o, b in zip(outs, backs):
                self.log.append(WireRecord("out", o))
                self.log.append(WireRecord("in", b))
                replies.append(Message.from_wire(b))
            return replies
        return [self._exchange(n, m) for n, m in zip(self.nodes, msgs)]

    def wire_log(self) -> list:
        return [{"direction": r.direction, **json.loads(r.text)} for r in self.log]

    def dump_transcript(self, path: str, release: Optional[ReleaseTranscript] = None):
        doc = {"messages": self.wire_log()}
        if release is not None:
            doc["transcript"] = release.to_list()
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)


def make_federation(centers: Sequence[GroupedSample], k: int = DEFAULT_K, seed: int = 0,
                    **kw) -> Coordinator:
    return Coordinator([CenterNode(c, k, seed) for c in centers], k, **kw)


# --- protocols -----------------------------------------------------------


def run_table_protocol(coord: Coordinator, policy: ExtremePolicy = ExtremePolicy(),
                       group: Optional[str] = None, order: str = "size-desc") -> JoinResult:
    """Build the summary table with one request per node, largest node first.

    ``group`` restricts every node to one group (``"x"``, ``"y"`` or ``"all"``)
    for one-group tables.  ``order="given"`` joins nodes in construction order.
    """
    if order == "size-desc":
        order = sorted(coord.nodes, key=lambda n: (-n.group_size(group), n.center_id))
    elif order == "given":
        order = coord.given_order
    else:
        raise ValueError(f"unknown join order {order!r}")
    pol = _policy_to(policy)
    first = order[0]
    reply = coord.request(first, "table_init_request", {"k": coord.k, "policy": pol, "group": group})
    table = SummaryTable.from_dict(reply.payload["table"])
    transcript = initial_records(table, first.center_id)
    sx = sy = None
    for node in order[1:]:
        reply = coord.request(node, "table_join_request",
                              {"table": table.to_dict(), "policy": pol, "group": group})
        rel = CenterRelease.from_dict(reply.payload["release"])
        table, sx, sy = apply_release(table, rel)
        transcript.extend(rel.records())
    return JoinResult(table, transcript, sx, sy)


def collect_stats(coord: Coordinator, sidedness: str = "two") -> List[CenterTestStat]:
    replies = coord.broadcast("mwu_stat_request", {"sidedness": sidedness})
    return [CenterTestStat.from_dict(r.payload["stat"]) for r in replies]


def run_mwu_protocol(coord: Coordinator, method: str, sidedness: str = "two",
                     policy: ExtremePolicy = ExtremePolicy()) -> CombinedTestResult:
    """Federated MWU test; ``method`` is ``sum``, ``weighted``, ``fisher`` or ``federated_table``."""
    if method in ("sum", "weighted", "fisher"):
        stats = collect_stats(coord, sidedness)
        if method == "sum":
            return t_sum(stats, sidedness)
        if method == "weighted":
            return t_weighted(stats, sidedness)
        return fisher_from_stats(stats, sidedness)
    if method in ("federated_table", "fedtable"):
        return mwu_federated_table(run_table_protocol(coord, policy).table, sidedness)
    raise ValueError(f"unknown federated test {method!r}")


class _RemoteMoments:
    def __init__(self, coord, group):
        self.coord = coord
        self.group = group
        self.rounds = 0

    def __call__(self, lambdas):
        self.rounds += 1
        replies = self.coord.broadcast("moment_request",
                                       {"lambdas": [float(l) for l in lambdas], "group": self.group})
        return combine_moments([r.payload for r in replies])


class _RemoteLoss:
    def __init__(self, coord, group):
        self.coord = coord
        self.group = group
        self.rounds = 0

    def range(self):
        self.rounds += 1
        return [r.payload for r in self.coord.broadcast("loss_query", {"range": True, "group": self.group})]

    def __call__(self, queries):
        self.rounds += 1
        replies = self.coord.broadcast("loss_query", {"queries": [list(q) for q in queries],
                                                      "group": self.group})
        return [r.payload for r in replies]


def run_quantile_protocol(coord: Coordinator, method: str, probs: Sequence[float],
                          group: str = "x", policy: ExtremePolicy = ExtremePolicy()):
    """Quantile estimates for ``probs``; returns ``(estimates, extra)``.

    ``extra`` carries the fit (YJ methods) or table result (``yj-table``).
    """
    probs = [float(p) for p in probs]
    if method == "loss":
        if coord.forbid_privacy_violating:
            raise PrivacyViolation("quantile-loss queries expose raw values")
        q = _RemoteLoss(coord, group)
        vals = estimate_quantiles_loss(q, probs)
        return [QuantileEstimate(p, v, "loss", q.rounds, "privacy_violating") for p, v in zip(probs, vals)], None
    if method == "yj-table":
        res = run_table_protocol(coord, policy, group=group)
        fit = fit_yj_table(res.table, "x")
        rounds = len(coord.nodes)
        return [estimate_quantile_yj_table(fit, p, rounds) for p in probs], (fit, res)
    if method in ("yj-mle", "yj-mle-grid"):
        q = _RemoteMoments(coord, group)
        fit = fit_yj_mle_query(q, "iterative" if method == "yj-mle" else "grid")
        return [estimate_quantile_yj_data(fit, p) for p in probs], fit
    raise ValueError(f"unknown quantile method {method!r}")
