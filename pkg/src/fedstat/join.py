"""Merging further centers into an existing summary table.

Joining happens in two halves.  The joining center (the *student*) looks at
its own data against the current boundaries and produces a
:class:`CenterRelease`: new cut points for bins it can split, its per-bin
counts for those splits, and a partition of its counts into spans whose sums
are private.  The coordinator then folds the release into the table, moving
the existing (*teacher*) frequencies onto the new sub-bins and spreading each
span sum over its bins in proportion to the teacher frequencies.  Only the
release crosses the center boundary, and every count in it is 0 or >= k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence
import zlib

import numpy as np

from .binning import (
    DEFAULT_K,
    ExtremePolicy,
    GroupedSample,
    SummaryTable,
    anonymize_boundary,
    bin_single_center,
    check_group_sizes,
    extreme_buffer,
    raw_binning,
)
from .errors import DegenerateWeights, EmptyCenter, InsufficientData

COUNT_KINDS = ("new_subbin_count", "merged_bin_sum")
RECORD_KINDS = COUNT_KINDS + ("boundary", "extreme_buffer")


@dataclass(frozen=True)
class ReleaseRecord:
    center_id: str
    kind: str
    group: str
    value: float

    def to_dict(self):
        v = self.value
        if math.isinf(v):
            v = "+inf" if v > 0 else "-inf"
        return {"center": self.center_id, "kind": self.kind, "group": self.group, "value": v}

    @classmethod
    def from_dict(cls, d):
        v = d["value"]
        if isinstance(v, str):
            v = float(v.replace("+", ""))
        return cls(str(d["center"]), d["kind"], d["group"], float(v))


@dataclass
class ReleaseTranscript:
    """Ordered log of every value a center hands to the coordinator."""

    records: List[ReleaseRecord] = field(default_factory=list)

    def add(self, center_id, kind, group, value):
        if kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        self.records.append(ReleaseRecord(str(center_id), kind, group, float(value)))

    def extend(self, other: "ReleaseTranscript"):
        self.records.extend(other.records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_list(self):
        return [r.to_dict() for r in self.records]

    @classmethod
    def from_list(cls, items):
        return cls([ReleaseRecord.from_dict(d) for d in items])


@dataclass(frozen=True)
class AuditReport:
    passed: bool
    k: int
    n_records: int
    offending: tuple = ()


def audit_transcript(t: Iterable[ReleaseRecord], k: int) -> AuditReport:
    """Check that every released count is 0 or at least ``k``."""
    records = list(t)
    bad = tuple(r for r in records if r.kind in COUNT_KINDS and not (r.value == 0 or r.value >= k))
    return AuditReport(passed=not bad, k=k, n_records=len(records), offending=bad)


@dataclass(frozen=True)
class JoinResult:
    """Table after a join plus the accumulated release transcript.

    ``student_fx``/``student_fy`` hold the last joined center's contribution
    per output bin after fixing (``None`` when no center was joined).
    """

    table: SummaryTable
    transcript: ReleaseTranscript
    student_fx: Optional[np.ndarray] = None
    student_fy: Optional[np.ndarray] = None

    def to_dict(self):
        d = self.table.to_dict()
        d["transcript"] = self.transcript.to_list()
        return d


# --- redistribution ------------------------------------------------------


def reallocate(total: float, weights: Sequence[float], uniform_fallback: bool = False) -> np.ndarray:
    """Split ``total`` proportionally to ``weights``.

    The largest share absorbs rounding so the shares add back to ``total``
    and none turns negative.  All
    zero weights with a positive total raise :class:`DegenerateWeights`, or
    split uniformly when ``uniform_fallback`` is set.
    """
    w = np.asarray(weights, dtype=float)
    if len(w) == 0:
        raise ValueError("no weights")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    s = w.sum()
    if total == 0:
        return np.zeros(len(w))
    if s == 0:
        if not uniform_fallback:
            raise DegenerateWeights(f"cannot split {total} over zero weights")
        w = np.ones(len(w))
        s = float(len(w))
    shares = total * w / s
    i = int(np.argmax(w))
    shares[i] = 0.0
    shares[i] = total - shares.sum()
    return shares


def _is_private(v, k):
    return v == 0 or v >= k


def next_private_subset(freqs: Sequence[float], k: int) -> int:
    """Length of the shortest private prefix whose remainder is also private.

    A prefix qualifies when its sum is 0 or >= k and the sum of what is left
    is 0 or >= k too, so a short tail is never stranded.  Falls back to the
    whole list.
    """
    f = list(freqs)
    if not f:
        raise ValueError("empty frequency list")
    total = sum(f)
    acc = 0.0
    for i, v in enumerate(f, start=1):
        acc += v
        if _is_private(acc, k) and _is_private(total - acc, k):
            return i
    return len(f)


def private_spans(freqs: Sequence[float], k: int):
    """Partition ``freqs`` left to right into ``(start, length, sum)`` spans."""
    spans = []
    start = 0
    f = list(freqs)
    while start < len(f):
        n = next_private_subset(f[start:], k)
        spans.append((start, n, float(sum(f[start:start + n]))))
        start += n
    return spans


def spread_spans(spans, f_teacher: Sequence[float], n_bins: int) -> np.ndarray:
    out = np.zeros(n_bins)
    teacher = np.asarray(f_teacher, dtype=float)
    for start, n, total in spans:
        out[start:start + n] = reallocate(total, teacher[start:start + n], uniform_fallback=True)
    return out


def fix_student_frequencies(f_teacher, f_student, k: int) -> np.ndarray:
    """Replace non-private student counts by redistributed span sums."""
    if len(f_teacher) != len(f_student):
        raise ValueError("teacher and student lengths differ")
    return spread_spans(private_spans(f_student, k), f_teacher, len(f_student))


# --- the student side ----------------------------------------------------


@dataclass(frozen=True)
class Split:
    bin: int
    cuts: tuple
    fx: tuple
    fy: tuple


@dataclass(frozen=True)
class CenterRelease:
    """Everything a joining center discloses; indices refer to post-split bins."""

    center_id: str
    splits: tuple
    spans_x: tuple
    spans_y: tuple
    low: Optional[float] = None
    high: Optional[float] = None

    def to_dict(self):
        return {
            "center": self.center_id,
            "splits": [{"bin": s.bin, "cuts": list(s.cuts), "fx": list(s.fx), "fy": list(s.fy)}
                       for s in self.splits],
            "spans_x": [list(s) for s in self.spans_x],
            "spans_y": [list(s) for s in self.spans_y],
            "low": self.low,
            "high": self.high,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            center_id=str(d["center"]),
            splits=tuple(Split(int(s["bin"]), tuple(s["cuts"]), tuple(s["fx"]), tuple(s["fy"]))
                         for s in d["splits"]),
            spans_x=tuple((int(a), int(b), float(c)) for a, b, c in d["spans_x"]),
            spans_y=tuple((int(a), int(b), float(c)) for a, b, c in d["spans_y"]),
            low=d.get("low"),
            high=d.get("high"),
        )

    def records(self) -> ReleaseTranscript:
        t = ReleaseTranscript()
        cid = self.center_id
        for s in self.splits:
            for c in s.cuts:
                t.add(cid, "boundary", "n/a", c)
            for v in s.fx:
                t.add(cid, "new_subbin_count", "x", v)
            for v in s.fy:
                t.add(cid, "new_subbin_count", "y", v)
        for group, spans in (("x", self.spans_x), ("y", self.spans_y)):
            for _, n, total in spans:
                t.add(cid, "merged_bin_sum" if n > 1 else "new_subbin_count", group, total)
        for v in (self.low, self.high):
            if v is not None:
                t.add(cid, "extreme_buffer", "n/a", v)
        return t


def _split_bins(boundaries, xs_by_bin, ys_by_bin, k, rng):
    splits = []
    for b, (xs, ys) in enumerate(zip(xs_by_bin, ys_by_bin)):
        raw = raw_binning(xs, ys, k)
        if raw.n_bins < 2:
            continue
        m = raw.members
        cuts = tuple(anonymize_boundary(float(m[j][-1]), float(m[j + 1][0]), rng)
                     for j in range(len(m) - 1))
        splits.append(Split(b, cuts, raw.fx, raw.fy))
    return splits


def student_release(table: SummaryTable, sample: GroupedSample, rng,
                    policy: ExtremePolicy = ExtremePolicy()) -> CenterRelease:
    """What ``sample``'s center discloses when joining ``table``."""
    k = table.k
    if sample.size == 0:
        raise EmptyCenter(f"center {sample.center_id} has no data")
    check_group_sizes(sample, k)
    B = table.n_bins
    bx = table.bin_index(sample.x)
    by = table.bin_index(sample.y)
    # data are sorted, so each bin's members form a contiguous run
    cx = np.searchsorted(bx, np.arange(B + 1))
    cy = np.searchsorted(by, np.arange(B + 1))
    xs_by_bin = [sample.x[cx[b]:cx[b + 1]] for b in range(B)]
    ys_by_bin = [sample.y[cy[b]:cy[b + 1]] for b in range(B)]

    splits = _split_bins(table.boundaries, xs_by_bin, ys_by_bin, k, rng)

    # extreme limits, from the new center's data in its own extreme bin
    lo, hi = sample.pooled()[[0, -1]]
    c0, cB = float(table.boundaries[0]), float(table.boundaries[-1])
    low = high = None
    if policy.kind == "natural" and (lo < policy.low or hi > policy.high):
        raise ValueError(f"center {sample.center_id}: data outside natural limits")
    if policy.kind == "buffer":
        by_bin = {s.bin: s for s in splits}
        pooled = sample.pooled()
        if lo < c0:
            first = np.sort(np.concatenate([xs_by_bin[0], ys_by_bin[0]]))
            if 0 in by_bin:
                first = first[first < by_bin[0].cuts[0]]
            # too few values would publish (nearly) a raw value; widen to the k smallest
            if len(first) < k:
                first = pooled[:k]
            low = float(lo - extreme_buffer(first))
        if hi > cB:
            last = np.sort(np.concatenate([xs_by_bin[-1], ys_by_bin[-1]]))
            if B - 1 in by_bin:
                last = last[last > by_bin[B - 1].cuts[-1]]
            if len(last) < k:
                last = pooled[-k:]
            high = float(hi + extreme_buffer(last))

    # drop any split whose cuts would not sit strictly inside the final bin limits
    edges = list(table.boundaries)
    if low is not None:
        edges[0] = low
    if high is not None:
        edges[-1] = high
    kept = []
    for s in splits:
        seq = [edges[s.bin], *s.cuts, edges[s.bin + 1]]
        if all(a < b for a, b in zip(seq, seq[1:])):
            kept.append(s)
    by_bin = {s.bin: s for s in kept}

    fx_student, fy_student = [], []
    for b in range(B):
        if b in by_bin:
            fx_student.extend(by_bin[b].fx)
            fy_student.extend(by_bin[b].fy)
        else:
            fx_student.append(len(xs_by_bin[b]))
            fy_student.append(len(ys_by_bin[b]))

    return CenterRelease(
        center_id=sample.center_id,
        splits=tuple(kept),
        spans_x=tuple(private_spans(fx_student, k)),
        spans_y=tuple(private_spans(fy_student, k)),
        low=low,
        high=high,
    )


# --- the coordinator side ------------------------------------------------


def apply_release(table: SummaryTable, release: CenterRelease):
    """Fold a center's release into ``table``.

    Returns ``(new_table, student_fx, student_fy)``.
    """
    by_bin = {s.bin: s for s in release.splits}
    bounds = [float(table.boundaries[0])]
    tx, ty = [], []
    for b in range(table.n_bins):
        s = by_bin.get(b)
        if s is None:
            tx.append(table.fx[b])
            ty.append(table.fy[b])
        else:
            bounds.extend(s.cuts)
            tx.extend(reallocate(table.fx[b], s.fx, uniform_fallback=True))
            ty.extend(reallocate(table.fy[b], s.fy, uniform_fallback=True))
        bounds.append(float(table.boundaries[b + 1]))
    if release.low is not None:
        bounds[0] = release.low
    if release.high is not None:
        bounds[-1] = release.high
    n = len(tx)
    sx = spread_spans(release.spans_x, tx, n)
    sy = spread_spans(release.spans_y, ty, n)
    new = SummaryTable(bounds, np.asarray(tx) + sx, np.asarray(ty) + sy, table.k)
    return new, sx, sy


def join_center(table: SummaryTable, sample: GroupedSample, rng,
                policy: ExtremePolicy = ExtremePolicy()) -> JoinResult:
    """Merge one more center into ``table`` without releasing non-private counts."""
    release = student_release(table, sample, rng, policy)
    new, sx, sy = apply_release(table, release)
    return JoinResult(new, release.records(), sx, sy)


def initial_records(table: SummaryTable, center_id: str) -> ReleaseTranscript:
    """Transcript entries for a center that publishes a whole table."""
    t = ReleaseTranscript()
    b = table.boundaries
    for v in (b[0], b[-1]):
        if math.isfinite(v):
            t.add(center_id, "extreme_buffer", "n/a", v)
    for v in b[1:-1]:
        t.add(center_id, "boundary", "n/a", v)
    for v in table.fx:
        t.add(center_id, "new_subbin_count", "x", v)
    for v in table.fy:
        t.add(center_id, "new_subbin_count", "y", v)
    return t


def center_rng(seed: int, center_id: str) -> np.random.Generator:
    """Per-center random stream; independent of join order and of other centers."""
    return np.random.default_rng([int(seed), zlib.crc32(str(center_id).encode())])


def join_order(centers: Sequence[GroupedSample]) -> list:
    """Centers by decreasing total size, ties broken by ``center_id``."""
    return sorted(centers, key=lambda c: (-c.size, c.center_id))


def build_federated_table(centers: Sequence[GroupedSample], k: int = DEFAULT_K, seed: int = 0,
                          policy: ExtremePolicy = ExtremePolicy(), order: str = "size-desc") -> JoinResult:
    """Bin the largest center, then join the rest in decreasing order of size.

    ``order="given"`` keeps the caller's order instead.
    """
    if not centers:
        raise EmptyCenter("no centers")
    ids = [c.center_id for c in centers]
    if len(set(ids)) != len(ids):
        raise ValueError("center ids must be unique")
    seq = join_order(centers) if order == "size-desc" else list(centers)
    first = seq[0]
    table = bin_single_center(first, k, center_rng(seed, first.center_id), policy)
    transcript = initial_records(table, first.center_id)
    sx = sy = None
    for c in seq[1:]:
        res = join_center(table, c, center_rng(seed, c.center_id), policy)
        table, sx, sy = res.table, res.student_fx, res.student_fy
        transcript.extend(res.transcript)
    return JoinResult(table, transcript, sx, sy)
