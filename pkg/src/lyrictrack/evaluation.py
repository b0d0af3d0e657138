"""Lyric anchor transfer and score-following style tracking metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CountError, EmptyAlignment, ParseError
from .oltw import AlignmentEvent

THRESHOLD_MS = 1000.0


@dataclass(frozen=True)
class Annotation:
    time_ms: float
    label: str = ""


@dataclass(frozen=True)
class Detection:
    label: str
    reference_time_ms: float
    target_time_ms: float
    extrapolated: bool = False


@dataclass
class MetricsReport:
    mean_error_ms: float
    pct_within_1s: float
    count: int
    errors_ms: list[float] = field(default_factory=list)  # signed, detected - truth

    def to_dict(self) -> dict:
        return {"mean_ms": self.mean_error_ms, "pct_le_1s": self.pct_within_1s,
                "n": self.count, "errors_ms": list(self.errors_ms)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def load_annotations(path) -> list[Annotation]:
    """Read a ``time_ms,label`` CSV (header required, times ascending, duplicates allowed)."""
    annotations: list[Annotation] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return annotations
        if [h.strip() for h in header[:2]] != ["time_ms", "label"]:
            raise ParseError(f"expected header 'time_ms,label', got {','.join(header)!r}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                t = float(row[0])
            except ValueError:
                raise ParseError(f"bad time value {row[0]!r}", line) from None
            if not np.isfinite(t) or t < 0:
                raise ParseError(f"time must be a non-negative number, got {row[0]!r}", line)
            if annotations and t < annotations[-1].time_ms:
                raise ParseError(f"times not sorted: {t} after {annotations[-1].time_ms}", line)
            label = ",".join(row[1:])
            annotations.append(Annotation(t, label))
    return annotations


def save_annotations(annotations: Sequence[Annotation], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time_ms", "label"])
        for a in annotations:
            writer.writerow([repr(float(a.time_ms)), a.label])


def transfer(annotations: Sequence[Annotation | float], events: Sequence[AlignmentEvent]) -> list[Detection]:
    """Map reference-time anchors to target time through an alignment event stream.

    An anchor is detected at the first event whose reference time reaches it,
    interpolating linearly from the event before. Anchors the stream never
    reaches are pinned to the last event and flagged as extrapolated.
    """
    if not events:
        raise EmptyAlignment("cannot transfer annotations through an empty event stream")
    ref_t = np.array([e.reference_time_ms for e in events], dtype=np.float64)
    tgt_t = np.array([e.target_time_ms for e in events], dtype=np.float64)
    # running max makes "first event with ref >= a" a binary search
    reached = np.maximum.accumulate(ref_t)
    out = []
    for a in annotations:
        a_time, label = (a.time_ms, a.label) if isinstance(a, Annotation) else (float(a), "")
        k = int(np.searchsorted(reached, a_time, side="left"))
        if k >= len(events):
            out.append(Detection(label, a_time, float(tgt_t[-1]), extrapolated=True))
            continue
        if k == 0:
            detected = tgt_t[0]
        else:
            # reached[k-1] < a <= ref_t[k], and the previous event sits at or below reached[k-1]
            r0, r1 = ref_t[k - 1], ref_t[k]
            frac = (a_time - r0) / (r1 - r0) if r1 > r0 else 1.0
            detected = tgt_t[k - 1] + min(max(frac, 0.0), 1.0) * (tgt_t[k] - tgt_t[k - 1])
        out.append(Detection(label, a_time, float(detected)))
    return out


def metrics(detected: Sequence[float], truth: Sequence[float], threshold_ms: float = THRESHOLD_MS) -> MetricsReport:
    """Mean absolute error and share of anchors within ``threshold_ms`` (inclusive)."""
    detected = np.asarray([d.target_time_ms if isinstance(d, Detection) else d for d in detected], dtype=np.float64)
    truth = np.asarray([t.time_ms if isinstance(t, Annotation) else t for t in truth], dtype=np.float64)
    if detected.shape != truth.shape:
        raise CountError(f"{len(detected)} detections vs {len(truth)} ground-truth annotations")
    if len(detected) == 0:
        return MetricsReport(0.0, 100.0, 0, [])
    errors = detected - truth
    absolute = np.abs(errors)
    return MetricsReport(
        mean_error_ms=float(absolute.mean()),
        pct_within_1s=float(100.0 * np.mean(absolute <= threshold_ms)),
        count=len(errors),
        errors_ms=[float(e) for e in errors],
    )
