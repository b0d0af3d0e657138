"""Synthetic reference posteriograms and time warps with known ground truth."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SpecError
from .posteriogram import FRAME_PERIOD_MS, PhonemeVocab, Posteriogram, to_probabilities

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class WarpSpec:
    """Piecewise-linear map from reference time to target time (both in ms)."""

    breakpoints: tuple[tuple[float, float], ...]
    noise_level: float = 0.0

    def __post_init__(self):
        bp = tuple((float(r), float(t)) for r, t in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        if len(bp) < 2:
            raise SpecError("a warp needs at least two breakpoints")
        ref = np.array([p[0] for p in bp])
        tgt = np.array([p[1] for p in bp])
        if np.any(np.diff(ref) <= 0) or np.any(np.diff(tgt) <= 0):
            raise SpecError("warp breakpoints must be strictly increasing in both coordinates")
        if ref[0] != 0.0 or tgt[0] != 0.0:
            raise SpecError("warp must start at (0, 0)")
        if self.noise_level < 0:
            raise SpecError("noise level must be non-negative")

    @property
    def ref_ms(self) -> np.ndarray:
        return np.array([p[0] for p in self.breakpoints])

    @property
    def target_ms(self) -> np.ndarray:
        return np.array([p[1] for p in self.breakpoints])

    def forward(self, ref_time_ms):
        """Reference time -> target time."""
        return np.interp(ref_time_ms, self.ref_ms, self.target_ms)

    def inverse(self, target_time_ms):
        """Target time -> reference time."""
        return np.interp(target_time_ms, self.target_ms, self.ref_ms)

    def to_json(self) -> str:
        return json.dumps({"breakpoints": [list(p) for p in self.breakpoints], "noise": self.noise_level})

    @classmethod
    def from_json(cls, text: str, noise_level: float | None = None) -> "WarpSpec":
        d = json.loads(text)
        noise = d.get("noise", 0.0) if noise_level is None else noise_level
        return cls(tuple(tuple(p) for p in d["breakpoints"]), noise)

    @classmethod
    def load(cls, path, noise_level: float | None = None) -> "WarpSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"), noise_level)

    @classmethod
    def uniform(cls, ref_duration_ms: float, slope: float, noise_level: float = 0.0) -> "WarpSpec":
        return cls(((0.0, 0.0), (ref_duration_ms, ref_duration_ms * slope)), noise_level)


def random_warp(ref_duration_ms: float, rng: np.random.Generator, n_segments: int = 8,
                slope_range: tuple[float, float] = (0.5, 2.0), noise_level: float = 0.0) -> WarpSpec:
    """Piecewise-linear warp with log-uniform segment slopes (target ms per reference ms)."""
    cuts = np.sort(rng.uniform(0.0, ref_duration_ms, n_segments - 1))
    ref = np.concatenate(([0.0], cuts, [ref_duration_ms]))
    lo, hi = np.log(slope_range[0]), np.log(slope_range[1])
    slopes = np.exp(rng.uniform(lo, hi, n_segments))
    tgt = np.concatenate(([0.0], np.cumsum(np.diff(ref) * slopes)))
    return WarpSpec(tuple(zip(ref, tgt)), noise_level)


def synth_warp(reference: Posteriogram, spec: WarpSpec, seed: int | None = 0) -> tuple[Posteriogram, WarpSpec]:
    """Build a target by resampling reference rows along ``spec`` and adding noise.

    Target frame ``j`` (time ``j * P``) copies reference frame
    ``round(spec.inverse(j * P) / P)``; then clipped Gaussian noise is added to the
    probabilities and each row renormalised. Returns ``(target, spec)``, the warp
    itself being the ground truth.
    """
    period = reference.frame_period_ms
    n_ref = len(reference)
    ref_end = n_ref * period
    if abs(spec.ref_ms[-1] - ref_end) > 1e-6 * max(ref_end, 1.0):
        raise SpecError(f"warp covers {spec.ref_ms[-1]} ms of reference, posteriogram lasts {ref_end} ms")
    n_target = int(round(spec.target_ms[-1] / period))
    ref_times = spec.inverse(np.arange(n_target) * period)
    src = np.minimum(np.floor(ref_times / period + 0.5).astype(np.int64), n_ref - 1)

    if spec.noise_level == 0.0:
        return Posteriogram(reference.data[src].copy(), period, reference.vocab), spec
    rng = np.random.default_rng(seed)
    probs = to_probabilities(reference)[src]
    probs = np.maximum(probs + rng.normal(0.0, spec.noise_level, probs.shape), PROB_FLOOR)
    probs /= probs.sum(axis=1, keepdims=True)
    return Posteriogram(np.log(probs), period, reference.vocab), spec


def truth_frames(spec: WarpSpec, n_target: int, frame_period_ms: float = FRAME_PERIOD_MS) -> np.ndarray:
    """Reference frame (fractional) that each target frame corresponds to."""
    return spec.inverse(np.arange(n_target) * frame_period_ms) / frame_period_ms


def synthetic_reference(n_frames: int, seed: int | None = 0, vocab: PhonemeVocab | None = None,
                        blank_rate: float = 0.3, mean_duration: float = 3.0,
                        min_duration: int = 2, sharpness: float = 6.0) -> Posteriogram:
    """A CTC-like posteriogram: runs of phoneme-dominated frames, blank frames in between.

    Every frame gets its own random logits on top of the dominant class, so no two
    frames are identical. Phoneme runs last at least ``min_duration`` frames so that
    a 2x faster warp, which samples every other frame, still shows every phoneme.
    """
    vocab = vocab or PhonemeVocab.default()
    rng = np.random.default_rng(seed)
    n_classes = len(vocab)
    phonemes = [i for i in range(n_classes) if i != vocab.blank_index]
    dominant = np.empty(n_frames, dtype=np.int64)
    t = 0
    while t < n_frames:
        if rng.random() < blank_rate:
            label, dur = vocab.blank_index, 1 + rng.poisson(1.0)
        else:
            label, dur = rng.choice(phonemes), min_duration + rng.poisson(max(mean_duration - min_duration, 0.0))
        dominant[t:t + dur] = label
        t += dur
    logits = rng.normal(0.0, 1.0, (n_frames, n_classes))
    logits[np.arange(n_frames), dominant] += sharpness
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return Posteriogram(logp, FRAME_PERIOD_MS, vocab)
