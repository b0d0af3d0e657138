"""Frame-paced replay: audio or posteriogram rows in, alignment events out."""
from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from .evaluation import MetricsReport, metrics, transfer
from .features import AudioBuffer, FeatureConfig, mfcc, resample
from .network import NetworkSpec, StreamingInference, WeightStore
from .oltw import AlignmentEvent, OLTWTracker, TrackerConfig
from .posteriogram import FRAME_PERIOD_MS, PhonemeVocab, Posteriogram, is_blank, strip_blanks
from .synth import WarpSpec, synth_warp


def audio_rows(audio: AudioBuffer, weights: WeightStore, spec: NetworkSpec | None = None) -> Iterator[np.ndarray]:
    """Log-probability rows of a recording, produced by the streaming network."""
    spec = spec or NetworkSpec()
    config = FeatureConfig.model80()
    if audio.sample_rate_hz != config.sample_rate_hz:
        audio = resample(audio, config.sample_rate_hz)
    stream = StreamingInference(weights, spec)
    for frame in mfcc(audio, config).data:
        row = stream.push(frame)
        if row is not None:
            yield row.log_probs
    for row in stream.flush():
        yield row.log_probs


def track_rows(tracker: OLTWTracker, rows: Iterable[np.ndarray], vocab: PhonemeVocab,
               frame_period_ms: float = FRAME_PERIOD_MS) -> Iterator[AlignmentEvent]:
    """Feed log-probability rows to the tracker one by one, skipping blank frames.

    Rows are pulled lazily, so the tracker never sees row ``k + 1`` before it has
    reported on row ``k``.
    """
    for index, log_row in enumerate(rows):
        probs = np.exp(np.asarray(log_row, dtype=np.float64))
        if is_blank(probs, vocab):
            continue
        yield tracker.step(probs, target_time_ms=index * frame_period_ms)


def replay_track(reference: Posteriogram, target: Posteriogram | Iterable[np.ndarray],
                 config: TrackerConfig | None = None) -> list[AlignmentEvent]:
    tracker = OLTWTracker(strip_blanks(reference), config)
    rows = target.data if isinstance(target, Posteriogram) else target
    return list(track_rows(tracker, rows, reference.vocab, reference.frame_period_ms))


def anchor_times(n_ref_frames: int, step_ms: float, frame_period_ms: float = FRAME_PERIOD_MS) -> np.ndarray:
    """Evenly spaced reference anchors strictly inside the reference."""
    return np.arange(step_ms, n_ref_frames * frame_period_ms, step_ms)


def warp_recovery(reference: Posteriogram, warp: WarpSpec, seed: int, config: TrackerConfig | None = None,
                  anchor_step_ms: float = 1000.0) -> MetricsReport:
    """Track a synthetic warp of ``reference`` and score transferred anchors against the warp."""
    target, truth = synth_warp(reference, warp, seed)
    events = replay_track(reference, target, config)
    anchors = anchor_times(len(reference), anchor_step_ms, reference.frame_period_ms)
    detected = [d.target_time_ms for d in transfer(anchors, events)]
    return metrics(detected, truth.forward(anchors))
