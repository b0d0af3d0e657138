"""Audio front end: framing, MFCCs, LPC-derived cepstra and resampling.

Three feature families are supported:

* ``model80``    - 80 MFCCs at 16 kHz, the acoustic network's input.
* ``baseline``   - 120 MFCCs at 44.1 kHz with the first 20 discarded.
* ``recitative`` - 25 cepstral coefficients of the LPC spectral envelope at 1500 Hz.

All variants use a 20 ms Hann window, a 10 ms hop and no edge padding.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct, rfft
from scipy.io import wavfile
from scipy.signal import firwin, get_window, resample_poly

from .errors import AudioFormatError, BadMagic, EmptyInput, FormatError, RateMismatch

LOG_FLOOR = 1e-10
VARIANTS = ("model80", "baseline", "recitative")

# The LPC envelope is analytic, so it is sampled on a finer grid than the 32-point
# FFT a 30-sample frame would give; otherwise most of the 25 mel bands are empty.
ENVELOPE_FFT_SIZE = 512


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioFormatError(f"expected mono samples, got array of shape {samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FeatureConfig:
    variant: str
    sample_rate_hz: int
    window_ms: float = 20.0
    hop_ms: float = 10.0
    n_mel_bands: int = 80
    n_coeffs: int = 80
    drop_first: int = 0
    lpc_order: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown feature variant {self.variant!r}")
        if not (self.window_ms >= self.hop_ms > 0):
            raise ValueError("need window_ms >= hop_ms > 0")
        if self.n_coeffs > self.n_mel_bands:
            raise ValueError("n_coeffs cannot exceed n_mel_bands")
        if self.variant == "baseline":
            if not 0 <= self.drop_first < self.n_coeffs:
                raise ValueError("drop_first must be in [0, n_coeffs)")
        elif self.drop_first != 0:
            raise ValueError(f"drop_first must be 0 for variant {self.variant}")
        if self.variant == "recitative" and (self.lpc_order is None or self.lpc_order < 1):
            raise ValueError("recitative features need a positive lpc_order")

    @classmethod
    def model80(cls) -> "FeatureConfig":
        return cls("model80", 16000, n_mel_bands=80, n_coeffs=80)

    @classmethod
    def baseline(cls) -> "FeatureConfig":
        return cls("baseline", 44100, n_mel_bands=120, n_coeffs=120, drop_first=20)

    @classmethod
    def recitative(cls, lpc_order: int = 12) -> "FeatureConfig":
        return cls("recitative", 1500, n_mel_bands=25, n_coeffs=25, lpc_order=lpc_order)

    @classmethod
    def for_variant(cls, variant: str) -> "FeatureConfig":
        try:
            return {"model80": cls.model80, "baseline": cls.baseline, "recitative": cls.recitative}[variant]()
        except KeyError:
            raise ValueError(f"unknown feature variant {variant!r}") from None

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * self.sample_rate_hz / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate_hz / 1000))

    @property
    def n_features(self) -> int:
        return self.n_coeffs - self.drop_first


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray
    frame_period_ms: float
    first_frame_center_ms: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature matrix contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def num_frames(n_samples: int, window: int, hop: int) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def frame_signal(audio: AudioBuffer, window_ms: float, hop_ms: float) -> np.ndarray:
    """Cut audio into Hann-windowed frames of shape ``(T, W)``.

    Frame ``k`` starts at sample ``k * H``; a trailing partial window is dropped.
    """
    sr = audio.sample_rate_hz
    win = int(round(window_ms * sr / 1000))
    hop = int(round(hop_ms * sr / 1000))
    if win < 1 or hop < 1:
        raise ValueError("window and hop must cover at least one sample")
    n = len(audio.samples)
    if n < win:
        raise EmptyInput(f"audio has {n} samples, shorter than one {win}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(audio.samples, win)[::hop]
    return frames * get_window("hann", win, fftbins=True)


def next_pow2(n: int) -> int:
    return 1 << max(0, math.ceil(math.log2(n)))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular HTK-mel filters from 0 Hz to Nyquist, shape ``(n_bands, n_fft//2 + 1)``."""
    nyquist = sample_rate_hz / 2
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), n_bands + 2))
    bins = np.linspace(0.0, nyquist, n_fft // 2 + 1)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lower) / (center - lower)
    falling = (upper - bins) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _log_mel_cepstrum(spectra: np.ndarray, n_fft: int, config: FeatureConfig) -> np.ndarray:
    fb = mel_filterbank(config.n_mel_bands, n_fft, config.sample_rate_hz)
    energies = spectra @ fb.T
    log_mel = np.log(np.maximum(energies, LOG_FLOOR))
    ceps = dct(log_mel, type=2, norm="ortho", axis=-1)
    return ceps[:, config.drop_first:config.n_coeffs]


def _check_rate(audio: AudioBuffer, config: FeatureConfig) -> None:
    if audio.sample_rate_hz != config.sample_rate_hz:
        raise RateMismatch(config.sample_rate_hz, audio.sample_rate_hz)


def _matrix(ceps: np.ndarray, config: FeatureConfig) -> FeatureMatrix:
    center = (config.window_samples / 2) / config.sample_rate_hz * 1000
    return FeatureMatrix(ceps, frame_period_ms=config.hop_ms, first_frame_center_ms=center)


def mfcc(audio: AudioBuffer, config: FeatureConfig) -> FeatureMatrix:
    """Power spectrum -> mel energies -> floored log -> orthonormal DCT-II."""
    if config.variant not in ("model80", "baseline"):
        raise ValueError(f"mfcc() does not compute variant {config.variant!r}")
    _check_rate(audio, config)
    frames = frame_signal(audio, config.window_ms, config.hop_ms)
    n_fft = next_pow2(frames.shape[1])
    power = np.abs(rfft(frames, n=n_fft, axis=-1)) ** 2
    return _matrix(_log_mel_cepstrum(power, n_fft, config), config)


def autocorrelation(frame: np.ndarray, max_lag: int) -> np.ndarray:
    n = len(frame)
    r = np.zeros(max_lag + 1)
    for k in range(min(max_lag, n - 1) + 1):
        r[k] = np.dot(frame[: n - k], frame[k:])
    return r


def levinson_durbin(autocorrelation, order: int) -> tuple[np.ndarray, float]:
    """Solve the Yule-Walker equations for a forward linear predictor.

    Args:
        autocorrelation: lags ``r[0] .. r[order]`` (extra lags are ignored).
        order: predictor order ``p >= 0``.

    Returns:
        ``(a, err)`` where ``x[n] ~ sum_k a[k-1] * x[n-k]`` and ``err`` is the final
        prediction error power. A zero-energy input yields zeros and ``err = 0``.
    """
    r = np.asarray(autocorrelation, dtype=np.float64)
    if order < 0:
        raise ValueError("order must be non-negative")
    if len(r) < order + 1:
        raise ValueError(f"need {order + 1} autocorrelation lags, got {len(r)}")
    a = np.zeros(order)
    if r[0] <= 0.0:
        return a, 0.0
    err = r[0]
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        k = acc / err
        a[:i] = a[:i] - k * a[:i][::-1]
        a[i] = k
        err *= 1.0 - k * k
        if err <= 0.0:
            # singular (perfectly predictable) frame: keep what we have
            return a, 0.0
    return a, float(err)


def lpc_envelope(a: np.ndarray, err: float, n_fft: int) -> np.ndarray:
    """Power envelope ``err / |1 - sum a_k e^{-iwk}|^2`` on the rfft grid."""
    inverse = np.concatenate(([1.0], -np.asarray(a, dtype=np.float64)))
    response = np.abs(rfft(inverse, n=n_fft)) ** 2
    return err / np.maximum(response, np.finfo(np.float64).tiny)


def recitative_feature(audio: AudioBuffer, config: FeatureConfig) -> FeatureMatrix:
    """Cepstral coefficients of the per-frame LPC spectral envelope."""
    if config.variant != "recitative":
        raise ValueError(f"recitative_feature() does not compute variant {config.variant!r}")
    _check_rate(audio, config)
    frames = frame_signal(audio, config.window_ms, config.hop_ms)
    order = config.lpc_order
    envelopes = np.empty((len(frames), ENVELOPE_FFT_SIZE // 2 + 1))
    for i, frame in enumerate(frames):
        a, err = levinson_durbin(autocorrelation(frame, order), order)
        envelopes[i] = lpc_envelope(a, err, ENVELOPE_FFT_SIZE)
    return _matrix(_log_mel_cepstrum(envelopes, ENVELOPE_FFT_SIZE, config), config)


def extract(audio: AudioBuffer, config: FeatureConfig) -> FeatureMatrix:
    if config.variant == "recitative":
        return recitative_feature(audio, config)
    return mfcc(audio, config)


def _polyphase_filter(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    half_len = 10 * max_rate
    h = firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", 5.0))
    # unit DC gain in every polyphase branch; resample_poly multiplies by `up`
    for phase in range(up):
        h[phase::up] /= h[phase::up].sum() * up
    return h


def resample(audio: AudioBuffer, target_rate_hz: int) -> AudioBuffer:
    """Linear-phase polyphase resampling to ``round(N * target / source)`` samples."""
    source = audio.sample_rate_hz
    if target_rate_hz <= 0:
        raise ValueError("target rate must be positive")
    if target_rate_hz == source:
        return AudioBuffer(audio.samples.copy(), source)
    g = math.gcd(source, target_rate_hz)
    up, down = target_rate_hz // g, source // g
    n_out = int(round(len(audio.samples) * target_rate_hz / source))
    if len(audio.samples) == 0:
        return AudioBuffer(np.zeros(0), target_rate_hz)
    y = resample_poly(audio.samples, up, down, window=_polyphase_filter(up, down), padtype="line")
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate((y, np.full(n_out - len(y), y[-1] if len(y) else 0.0)))
    return AudioBuffer(y, target_rate_hz)


# --- file formats ---------------------------------------------------------

def read_wav(path) -> AudioBuffer:
    """Read a mono RIFF WAVE file (16-bit PCM or 32-bit float) into [-1, 1] floats."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        if data.shape[1] == 1:
            data = data[:, 0]
        else:
            raise AudioFormatError(f"{path}: expected mono audio, found {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype} (need int16 or float32)")
    return AudioBuffer(samples, int(rate))


def write_wav(path, audio: AudioBuffer, float32: bool = False) -> None:
    if float32:
        data = audio.samples.astype(np.float32)
    else:
        data = np.round(np.clip(audio.samples, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    wavfile.write(path, audio.sample_rate_hz, data)


FEAT_MAGIC = b"FEAT1"
_FEAT_HEADER = struct.Struct("<IIdd")


def save_features(features: FeatureMatrix, path) -> None:
    data = np.ascontiguousarray(features.data, dtype="<f4")
    t, d = data.shape
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(_FEAT_HEADER.pack(t, d, features.frame_period_ms, features.first_frame_center_ms))
        fh.write(data.tobytes())


def load_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if raw[: len(FEAT_MAGIC)] != FEAT_MAGIC:
        raise BadMagic(f"{path}: not a FEAT1 file")
    offset = len(FEAT_MAGIC)
    if len(raw) < offset + _FEAT_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    t, d, period, first = _FEAT_HEADER.unpack_from(raw, offset)
    offset += _FEAT_HEADER.size
    n_bytes = 4 * t * d
    if len(raw) - offset < n_bytes:
        raise FormatError(f"{path}: payload has {len(raw) - offset} bytes, expected {n_bytes}")
    data = np.frombuffer(raw, dtype="<f4", count=t * d, offset=offset).reshape(t, d).astype(np.float32)
    return FeatureMatrix(data, frame_period_ms=period, first_frame_center_ms=first)
