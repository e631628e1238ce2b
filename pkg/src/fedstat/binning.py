"""K-anonymous binning of a single center's data.

A center's two sorted groups are cut into bins, left to right, so that every
bin holds either zero or at least ``k`` observations of each group.  Cut
points are actual data values during construction; the published boundaries
are then randomized strictly between neighbouring data values so that no raw
value leaks through the table.

Bin membership in a published :class:`SummaryTable` is ``(c[b-1], c[b]]`` for
every bin except the first, which also contains its lower edge ``c[0]``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientData

DEFAULT_K = 10


class _Unconstrained:
    """Marker returned for an empty group: it places no limit on a cut."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNCONSTRAINED"


UNCONSTRAINED = _Unconstrained()


def _frozen(values, sort=False):
    arr = np.array(values, dtype=float).ravel()
    if sort:
        arr.sort()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GroupedSample:
    """Raw observations held by one center, split into control ``x`` and treatment ``y``."""

    x: np.ndarray
    y: np.ndarray = field(default_factory=lambda: np.empty(0))
    center_id: str = "0"

    def __post_init__(self):
        x = _frozen(self.x, sort=True)
        y = _frozen(self.y, sort=True)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError(f"center {self.center_id}: non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "center_id", str(self.center_id))

    @property
    def size(self) -> int:
        return len(self.x) + len(self.y)

    def pooled(self) -> np.ndarray:
        return np.sort(np.concatenate([self.x, self.y]))


@dataclass(frozen=True)
class ExtremePolicy:
    """How the outer limits ``c[0]`` and ``c[B]`` are published.

    ``"buffer"`` pads the extreme data values by the mean gap inside the
    extreme bin, ``"infinite"`` publishes -inf/+inf, and ``"natural"`` uses
    caller-supplied domain limits ``low``/``high``.
    """

    kind: str = "buffer"
    low: float = -math.inf
    high: float = math.inf

    def __post_init__(self):
        if self.kind not in ("buffer", "infinite", "natural"):
            raise ValueError(f"unknown extreme policy {self.kind!r}")
        if self.kind == "natural" and not self.low < self.high:
            raise ValueError("natural limits must satisfy low < high")


@dataclass(frozen=True)
class RawBinnedTable:
    """Bins before anonymization; boundaries are real data values.

    ``raw_boundaries[0]`` is the pooled minimum and ``raw_boundaries[b]`` the
    maximum of bin ``b``.  ``members`` keeps the pooled sorted values of each
    bin, needed for boundary mixing and buffers.
    """

    raw_boundaries: tuple
    fx: tuple
    fy: tuple
    members: tuple = ()

    @property
    def n_bins(self) -> int:
        return len(self.fx)


@dataclass(frozen=True, eq=False)
class SummaryTable:
    boundaries: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    k: int = DEFAULT_K

    def __post_init__(self):
        b = _frozen(self.boundaries)
        fx = _frozen(self.fx)
        fy = _frozen(self.fy)
        if len(b) != len(fx) + 1 or len(fx) != len(fy) or len(fx) == 0:
            raise ValueError("need B+1 boundaries and B frequencies per group")
        steps = np.diff(b)
        # a single bin of tied values publishes c[0] == c[1]
        if np.any(steps < 0) or (len(fx) > 1 and np.any(steps == 0)):
            raise ValueError("boundaries must be strictly increasing")
        if np.any(fx < 0) or np.any(fy < 0):
            raise ValueError("frequencies must be non-negative")
        if int(self.k) < 1:
            raise ValueError("k must be >= 1")
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "fx", fx)
        object.__setattr__(self, "fy", fy)
        object.__setattr__(self, "k", int(self.k))

    def __eq__(self, other):
        if not isinstance(other, SummaryTable):
            return NotImplemented
        return (self.k == other.k and np.array_equal(self.boundaries, other.boundaries)
                and np.array_equal(self.fx, other.fx) and np.array_equal(self.fy, other.fy))

    __hash__ = None

    @property
    def n_bins(self) -> int:
        return len(self.fx)

    def bin_index(self, values) -> np.ndarray:
        """Bin of each value; values outside the limits go to the extreme bins."""
        idx = np.searchsorted(self.boundaries, np.asarray(values, dtype=float), side="left") - 1
        return np.clip(idx, 0, self.n_bins - 1)

    def count(self, values) -> np.ndarray:
        return np.bincount(self.bin_index(values), minlength=self.n_bins)

    def group(self, name: str) -> np.ndarray:
        return {"x": self.fx, "y": self.fy}[name]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "boundaries": [_encode_float(v) for v in self.boundaries],
            "fx": [float(v) for v in self.fx],
            "fy": [float(v) for v in self.fy],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SummaryTable":
        return cls(
            boundaries=[_decode_float(v) for v in d["boundaries"]],
            fx=d["fx"],
            fy=d["fy"],
            k=d.get("k", DEFAULT_K),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SummaryTable":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "fx", "fy"])
        for b in range(self.n_bins):
            w.writerow([
                _encode_float(self.boundaries[b]),
                _encode_float(self.boundaries[b + 1]),
                repr(float(self.fx[b])),
                repr(float(self.fy[b])),
            ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, k: int = DEFAULT_K) -> "SummaryTable":
        rows = list(csv.DictReader(io.StringIO(text)))
        bounds = [_decode_float(rows[0]["bin_low"])] + [_decode_float(r["bin_high"]) for r in rows]
        return cls(bounds, [float(r["fx"]) for r in rows], [float(r["fy"]) for r in rows], k)


def _encode_float(v):
    v = float(v)
    if v == math.inf:
        return "+inf"
    if v == -math.inf:
        return "-inf"
    return v


def _decode_float(v):
    if isinstance(v, str):
        v = v.strip()
        if v in ("+inf", "inf"):
            return math.inf
        if v == "-inf":
            return -math.inf
    return float(v)


# --- cut-point search ----------------------------------------------------


def next_1d_point(x: np.ndarray, k: int):
    """Next candidate cut for one sorted group.

    Returns ``UNCONSTRAINED`` for an empty group and ``None`` when fewer than
    ``k`` values remain.  Otherwise returns the value at index ``k`` (moved
    right past any values tied with ``x[k-1]``), or the maximum when the
    values at and beyond that point would form a tail shorter than ``k``.
    """
    n = len(x)
    if n == 0:
        return UNCONSTRAINED
    if n < k:
        return None
    j = k
    if j < n and x[j] == x[j - 1]:
        j = int(np.searchsorted(x, x[j - 1], side="right"))
    if j >= n or n - j < k:
        return float(x[-1])
    return float(x[j])


def _private(count, k) -> bool:
    return count == 0 or count >= k


def valid_point(x: np.ndarray, q: float, k: int) -> bool:
    """True when cutting ``x`` at ``q`` (strict ``<``) leaves both sides 0 or >= k."""
    left = int(np.searchsorted(x, q, side="left"))
    return _private(left, k) and _private(len(x) - left, k)


def next_2d_point(x: np.ndarray, y: np.ndarray, k: int) -> Optional[float]:
    """Next cut valid for both groups, or ``None`` when no cut can be placed.

    The smaller of the two per-group candidates wins when it is valid for both
    groups, then the larger.  When a group's candidate is its own maximum, the
    first value of the other group beyond that maximum is also tried, which
    lets the other group keep binning once the first is exhausted.
    """
    q1 = next_1d_point(x, k)
    q2 = next_1d_point(y, k)
    if q1 is None or q2 is None:
        return None
    cands = set()
    for q, own, other in ((q1, x, y), (q2, y, x)):
        if q is UNCONSTRAINED:
            continue
        cands.add(q)
        if q == own[-1]:
            i = int(np.searchsorted(other, q, side="right"))
            if i < len(other):
                cands.add(float(other[i]))
    for q in sorted(cands):
        lx = int(np.searchsorted(x, q, side="left"))
        ly = int(np.searchsorted(y, q, side="left"))
        if lx + ly == 0:
            continue
        if (_private(lx, k) and _private(len(x) - lx, k)
                and _private(ly, k) and _private(len(y) - ly, k)):
            return q
    return None


def raw_binning(x, y, k: int) -> RawBinnedTable:
    """Greedy left-to-right binning with data-valued cut points.

    Each cut sends values strictly below it to a new bin; once no cut can be
    placed, the unbinned remainder forms the final bin.

    No size preconditions are checked; a group with 1..k-1 values simply
    prevents any cut, yielding a single bin.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ix = iy = 0
    spans = []
    while True:
        q = next_2d_point(x[ix:], y[iy:], k)
        if q is None:
            break
        jx = ix + int(np.searchsorted(x[ix:], q, side="left"))
        jy = iy + int(np.searchsorted(y[iy:], q, side="left"))
        spans.append([ix, jx, iy, jy])
        ix, iy = jx, jy
    # whatever is left (0 or >= k per group, by the cut checks) is the last bin
    if ix < len(x) or iy < len(y):
        spans.append([ix, len(x), iy, len(y)])
    members = tuple(np.sort(np.concatenate([x[a:b], y[c:d]])) for a, b, c, d in spans)
    fx = tuple(b - a for a, b, _, _ in spans)
    fy = tuple(d - c for _, _, c, d in spans)
    bounds = (float(members[0][0]),) + tuple(float(m[-1]) for m in members) if members else ()
    return RawBinnedTable(bounds, fx, fy, members)


# --- anonymization -------------------------------------------------------


def _open_uniform(rng) -> float:
    w = rng.random()
    while w == 0.0:
        w = rng.random()
    return w


def anonymize_boundary(a_j: float, next_bin_min: float, rng, w: Optional[float] = None) -> float:
    """Random convex mix of a bin's maximum and the next bin's minimum.

    The result lies strictly between the two values, so counts do not depend
    on whether bins are read as open or closed.  A tied pair is returned
    unchanged.  ``w`` overrides the random mixing weight.
    """
    if not a_j < next_bin_min:
        return float(a_j)
    if w is None:
        w = _open_uniform(rng)
    c = w * a_j + (1.0 - w) * next_bin_min
    if not a_j < c < next_bin_min:
        c = a_j + (next_bin_min - a_j) / 2.0
        if not a_j < c < next_bin_min:
            # adjacent floats: the bin maximum itself is the only separator
            c = a_j
    return float(c)


def extreme_buffer(bin_values) -> float:
    """Mean gap between consecutive sorted values of an extreme bin."""
    v = np.asarray(bin_values, dtype=float)
    if len(v) < 2:
        return 0.0
    return float((v.max() - v.min()) / (len(v) - 1))


def outer_limits(first_bin, last_bin, policy: ExtremePolicy):
    """Published ``(c[0], c[B])`` for the given extreme-bin contents."""
    lo, hi = float(np.min(first_bin)), float(np.max(last_bin))
    if policy.kind == "infinite":
        return -math.inf, math.inf
    if policy.kind == "natural":
        if lo < policy.low or hi > policy.high:
            raise ValueError(
                f"data range [{lo}, {hi}] exceeds natural limits [{policy.low}, {policy.high}]")
        return policy.low, policy.high
    return lo - extreme_buffer(first_bin), hi + extreme_buffer(last_bin)


def check_group_sizes(sample: GroupedSample, k: int):
    for name, g in (("x", sample.x), ("y", sample.y)):
        if 0 < len(g) < k:
            raise InsufficientData(
                f"center {sample.center_id}: group {name} has {len(g)} observations, fewer than k={k}",
                center_id=sample.center_id,
            )


def anonymize(raw: RawBinnedTable, k: int, rng, policy: ExtremePolicy = ExtremePolicy()) -> SummaryTable:
    """Publishable table from a raw binning; counts are carried over unchanged."""
    members = raw.members
    inner = [anonymize_boundary(float(members[j][-1]), float(members[j + 1][0]), rng)
             for j in range(len(members) - 1)]
    lo, hi = outer_limits(members[0], members[-1], policy)
    return SummaryTable([lo] + inner + [hi], raw.fx, raw.fy, k)


def bin_single_center(sample: GroupedSample, k: int = DEFAULT_K, rng=None,
                      policy: ExtremePolicy = ExtremePolicy()) -> SummaryTable:
    """K-anonymous summary table of one center's data.

    Raises :class:`InsufficientData` when a nonempty group has fewer than ``k``
    observations.
    """
    if rng is None:
        rng = np.random.default_rng()
    if sample.size == 0:
        raise InsufficientData(f"center {sample.center_id} has no data", center_id=sample.center_id)
    check_group_sizes(sample, k)
    return anonymize(raw_binning(sample.x, sample.y, k), k, rng, policy)


def table_counts(table: SummaryTable, values: Sequence[float]) -> np.ndarray:
    """Histogram of ``values`` against the table's published boundaries."""
    return table.count(values)
