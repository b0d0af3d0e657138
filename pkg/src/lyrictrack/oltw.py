"""Windowed online time warping of a live posteriogram against a reference.

Each incoming target row is compared (cosine distance) with a window of
reference rows centred on the last reported position. The accumulated cost row

    D(n, m) = c(n, m) + min(D(n-1, m-1), D(n-1, m), D(n, m-1))

is updated in place of the previous one and cells outside the window count as
+inf. The reported position is the argmin of D over the window, or of D divided
by path length when ``TrackerConfig.normalize`` is set.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import DimensionError
from .posteriogram import FRAME_PERIOD_MS, StrippedPosteriogram

INF = np.inf


def cosine_distance(u, v) -> float:
    """``1 - cos(u, v)``; returns 1.0 when either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"vector lengths differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 1.0
    return float(np.clip(1.0 - np.dot(u, v) / (nu * nv), 0.0, 2.0))


def cosine_distances(rows: np.ndarray, row_norms: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorised :func:`cosine_distance` of ``v`` against every row."""
    nv = np.linalg.norm(v)
    out = np.ones(len(rows))
    if nv == 0.0:
        return out
    ok = row_norms > 0.0
    out[ok] = 1.0 - (rows[ok] @ v) / (row_norms[ok] * nv)
    return np.clip(out, 0.0, 2.0)


def context_seconds(window_frames: int, frame_period_ms: float = FRAME_PERIOD_MS) -> float:
    return window_frames * frame_period_ms / 1000.0


@njit(cache=True)
def _first_row(cost, start):
    n = cost.shape[0]
    acc = np.full(n, np.inf)
    length = np.zeros(n, dtype=np.int64)
    if 0 <= start < n:
        acc[start] = cost[start]
        length[start] = 1
        for j in range(start + 1, n):
            acc[j] = cost[j] + acc[j - 1]
            length[j] = length[j - 1] + 1
    return acc, length


@njit(cache=True)
def _next_row(cost, prev, prev_len):
    """One DTW row. ``prev``/``prev_len`` are shifted by one: index ``j`` holds column ``j - 1``.

    Predecessor ties resolve diagonal, then vertical, then horizontal.
    """
    n = cost.shape[0]
    acc = np.full(n, np.inf)
    length = np.zeros(n, dtype=np.int64)
    for j in range(n):
        best = prev[j]
        best_len = prev_len[j]
        if prev[j + 1] < best:
            best = prev[j + 1]
            best_len = prev_len[j + 1]
        if j > 0 and acc[j - 1] < best:
            best = acc[j - 1]
            best_len = length[j - 1]
        if best < np.inf:
            acc[j] = cost[j] + best
            length[j] = best_len + 1
    return acc, length


@dataclass(frozen=True)
class TrackerConfig:
    window_frames: int = 8000
    monotonic: bool = True
    # Dividing by path length favours long paths and drifts ahead of the true
    # position on synthetic warps, so raw accumulated cost is the default.
    normalize: bool = False

    def __post_init__(self):
        if self.window_frames < 3:
            raise ValueError("window_frames must be >= 3")


@dataclass
class TrackerState:
    cost_row: np.ndarray = field(default_factory=lambda: np.zeros(0))
    len_row: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    window_start: int = 0
    current_position: int = 0
    start_position: int = 0
    target_count: int = 0
    distance_evaluations: int = 0
    total_distance_evaluations: int = 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrackerState):
            return NotImplemented
        a, b = asdict(self), asdict(other)
        return all(np.array_equal(a[k], b[k]) for k in a)


@dataclass(frozen=True)
class AlignmentEvent:
    target_index: int
    target_time_ms: float
    reference_index: int
    reference_time_ms: float
    normalized_cost: float
    exhausted: bool = False

    FIELDS = ("target_index", "target_time_ms", "reference_index", "reference_time_ms", "normalized_cost")

    def to_tsv(self) -> str:
        return (f"{self.target_index}\t{self.target_time_ms:.3f}\t{self.reference_index}\t"
                f"{self.reference_time_ms:.3f}\t{self.normalized_cost:.9g}")

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in self.FIELDS})


class OLTWTracker:
    """Incremental aligner for one live stream; the reference may be shared."""

    def __init__(self, reference: StrippedPosteriogram, config: TrackerConfig | None = None):
        if len(reference) == 0:
            raise ValueError("reference posteriogram is empty")
        self.reference = reference
        self.config = config or TrackerConfig()
        self._ref = np.asarray(reference.data, dtype=np.float64)
        self._ref_norms = np.linalg.norm(self._ref, axis=1)
        self._ref_times = reference.times_ms()
        self.state = TrackerState()

    def __len__(self) -> int:
        return len(self._ref)

    def reset(self) -> None:
        self.state = TrackerState()

    def seed_position(self, reference_index: int) -> None:
        """Restart alignment with the path anchored at ``reference_index``."""
        if not 0 <= reference_index < len(self._ref):
            raise IndexError(f"seed {reference_index} outside reference of length {len(self._ref)}")
        self.state = TrackerState(current_position=reference_index, start_position=reference_index)

    def window(self, center: int | None = None) -> tuple[int, int]:
        """Half-open reference range ``[start, end)`` centred on ``center``, clamped."""
        center = self.state.current_position if center is None else center
        width = min(self.config.window_frames, len(self._ref))
        start = min(max(center - self.config.window_frames // 2, 0), len(self._ref) - width)
        return start, start + width

    def local_costs(self, start: int, end: int, target_row: np.ndarray) -> np.ndarray:
        return cosine_distances(self._ref[start:end], self._ref_norms[start:end], target_row)

    def step(self, target_row, target_time_ms: float | None = None) -> AlignmentEvent:
        """Consume one (non-blank) target probability row and report a reference position."""
        st = self.state
        y = np.asarray(target_row, dtype=np.float64)
        if y.shape != (self._ref.shape[1],):
            raise DimensionError(f"target row has shape {y.shape}, expected ({self._ref.shape[1]},)")
        start, end = self.window()
        cost = self.local_costs(start, end, y)
        st.distance_evaluations = end - start
        st.total_distance_evaluations += end - start

        if st.target_count == 0:
            acc, length = _first_row(cost, st.start_position - start)
        else:
            # previous row re-indexed onto the new window, one extra cell for m - 1
            prev = np.full(end - start + 1, INF)
            prev_len = np.zeros(end - start + 1, dtype=np.int64)
            lo = max(start - 1, st.window_start)
            hi = min(end, st.window_start + len(st.cost_row))
            if hi > lo:
                prev[lo - start + 1:hi - start + 1] = st.cost_row[lo - st.window_start:hi - st.window_start]
                prev_len[lo - start + 1:hi - start + 1] = st.len_row[lo - st.window_start:hi - st.window_start]
            acc, length = _next_row(cost, prev, prev_len)

        normalized = acc / np.maximum(length, 1)
        score = normalized if self.config.normalize else acc
        position = start + int(np.argmin(score))
        if self.config.monotonic and st.target_count > 0:
            position = max(position, st.current_position)

        st.cost_row, st.len_row, st.window_start = acc, length, start
        st.current_position = position
        n = st.target_count
        st.target_count += 1
        if target_time_ms is None:
            target_time_ms = n * self.reference.original_frame_period_ms
        return AlignmentEvent(
            target_index=n,
            target_time_ms=float(target_time_ms),
            reference_index=position,
            reference_time_ms=float(self._ref_times[position]),
            normalized_cost=float(normalized[position - start]),
            exhausted=position == len(self._ref) - 1,
        )


@dataclass
class OfflineAlignment:
    path: list[tuple[int, int]]
    total_cost: float
    accumulated: np.ndarray
    events: list[AlignmentEvent]


def run_offline(reference: StrippedPosteriogram, target: StrippedPosteriogram) -> OfflineAlignment:
    """Full, unwindowed DTW from (0, 0) to (N-1, M-1) with backtracking.

    Memory is O(N * M); meant for short excerpts and as a test oracle.
    """
    ref = np.asarray(reference.data, dtype=np.float64)
    tgt = np.asarray(target.data, dtype=np.float64)
    if len(ref) == 0 or len(tgt) == 0:
        raise ValueError("both posteriograms must be non-empty")
    ref_norms = np.linalg.norm(ref, axis=1)
    n_t, n_r = len(tgt), len(ref)
    acc = np.empty((n_t, n_r))
    lengths = np.empty((n_t, n_r), dtype=np.int64)
    acc[0], lengths[0] = _first_row(cosine_distances(ref, ref_norms, tgt[0]), 0)
    for n in range(1, n_t):
        prev = np.concatenate(([INF], acc[n - 1]))
        prev_len = np.concatenate(([0], lengths[n - 1]))
        acc[n], lengths[n] = _next_row(cosine_distances(ref, ref_norms, tgt[n]), prev, prev_len)

    # same predecessor preference as the forward pass: diagonal, vertical, horizontal
    n, m = n_t - 1, n_r - 1
    path = [(n, m)]
    while n > 0 or m > 0:
        options = []
        if n > 0 and m > 0:
            options.append((acc[n - 1, m - 1], n - 1, m - 1))
        if n > 0:
            options.append((acc[n - 1, m], n - 1, m))
        if m > 0:
            options.append((acc[n, m - 1], n, m - 1))
        best = min(o[0] for o in options)
        _, n, m = next(o for o in options if o[0] == best)
        path.append((n, m))
    path.reverse()

    last_ref = {}
    for n, m in path:
        last_ref[n] = m
    ref_times = reference.times_ms()
    tgt_times = target.times_ms()
    events = [
        AlignmentEvent(n, float(tgt_times[n]), m, float(ref_times[m]), float(acc[n, m] / lengths[n, m]),
                       m == n_r - 1)
        for n, m in sorted(last_ref.items())
    ]
    return OfflineAlignment(path, float(acc[-1, -1]), acc, events)


# --- event streams -------------------------------------------------------------

def write_events(events, fh, fmt: str = "tsv") -> None:
    for event in events:
        fh.write((event.to_json() if fmt == "jsonl" else event.to_tsv()) + "\n")


def read_events(path) -> list[AlignmentEvent]:
    """Read a TSV or JSON-lines event file (format detected per line)."""
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("{"):
                d = json.loads(line)
                values = [d[k] for k in AlignmentEvent.FIELDS]
            else:
                values = line.split("\t")
            events.append(AlignmentEvent(int(values[0]), float(values[1]), int(values[2]),
                                         float(values[3]), float(values[4])))
    return events
