"""Posteriogram containers, blank stripping and the PGRM1/PGRS1 file formats."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, FormatError

N_CLASSES = 60
N_PHONEMES = 57
FRAME_PERIOD_MS = 40.0


@dataclass(frozen=True)
class PhonemeVocab:
    """Ordered class names; space, instrumental and blank default to the last three slots."""

    tokens: tuple[str, ...]
    space_index: int = N_CLASSES - 3
    instrumental_index: int = N_CLASSES - 2
    blank_index: int = N_CLASSES - 1

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        reserved = (self.space_index, self.instrumental_index, self.blank_index)
        if len(set(reserved)) != 3:
            raise ValueError("reserved indices must be distinct")
        if not all(0 <= i < len(tokens) for i in reserved):
            raise ValueError("reserved indices out of range")

    @classmethod
    def default(cls) -> "PhonemeVocab":
        names = [f"ph{i:02d}" for i in range(N_PHONEMES)]
        return cls(tuple(names + ["<space>", "<instrumental>", "<blank>"]))

    @classmethod
    def from_tokens(cls, tokens) -> "PhonemeVocab":
        n = len(tokens)
        return cls(tuple(tokens), n - 3, n - 2, n - 1)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Posteriogram:
    """Frame-wise log-probabilities, shape ``(T, n_classes)``.

    ``n_padded`` counts trailing rows that were computed with zero-padded future
    context (end of stream); it is not stored on disk.
    """

    data: np.ndarray
    frame_period_ms: float = FRAME_PERIOD_MS
    vocab: PhonemeVocab = field(default_factory=PhonemeVocab.default)
    n_padded: int = 0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"posteriogram must be 2-D, got shape {data.shape}")
        if data.shape[1] != len(self.vocab):
            raise ValueError(f"posteriogram has {data.shape[1]} classes, vocabulary has {len(self.vocab)}")
        object.__setattr__(self, "data", data)

    def __len__(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_probabilities(cls, probs, frame_period_ms: float = FRAME_PERIOD_MS,
                           vocab: PhonemeVocab | None = None) -> "Posteriogram":
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
        return cls(logp, frame_period_ms, vocab or PhonemeVocab.default())


@dataclass(frozen=True)
class StrippedPosteriogram:
    """Probabilities of the non-blank frames plus their original frame indices."""

    data: np.ndarray
    index_map: np.ndarray
    original_frame_period_ms: float = FRAME_PERIOD_MS
    vocab: PhonemeVocab = field(default_factory=PhonemeVocab.default)

    def __post_init__(self):
        data = np.asarray(self.data)
        index_map = np.asarray(self.index_map, dtype=np.int64)
        if data.ndim != 2 or data.shape[0] != len(index_map):
            raise ValueError("data rows and index_map length disagree")
        if len(index_map) > 1 and np.any(np.diff(index_map) <= 0):
            raise ValueError("index_map must be strictly increasing")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "index_map", index_map)

    def __len__(self) -> int:
        return self.data.shape[0]

    def times_ms(self) -> np.ndarray:
        return self.index_map * self.original_frame_period_ms


def to_probabilities(pg: Posteriogram) -> np.ndarray:
    return np.exp(np.asarray(pg.data, dtype=np.float64))


def is_blank(probs: np.ndarray, vocab: PhonemeVocab) -> np.ndarray | bool:
    """True where the argmax class is blank (ties go to the lower index)."""
    return np.argmax(probs, axis=-1) == vocab.blank_index


def strip_blanks(pg: Posteriogram | StrippedPosteriogram,
                 vocab: PhonemeVocab | None = None) -> StrippedPosteriogram:
    """Drop every frame whose most probable class is blank.

    Accepts an already stripped posteriogram too, in which case the index map is
    carried through (so stripping is idempotent).
    """
    vocab = vocab or pg.vocab
    if isinstance(pg, StrippedPosteriogram):
        probs, index_map, period = pg.data, pg.index_map, pg.original_frame_period_ms
    else:
        probs = to_probabilities(pg)
        index_map, period = np.arange(len(pg)), pg.frame_period_ms
    keep = ~is_blank(probs, vocab) if len(probs) else np.zeros(0, dtype=bool)
    return StrippedPosteriogram(probs[keep], index_map[keep], period, vocab)


def original_time_ms(sp: StrippedPosteriogram, stripped_index: int) -> float:
    if not 0 <= stripped_index < len(sp):
        raise IndexError(f"stripped index {stripped_index} out of range [0, {len(sp)})")
    return float(sp.index_map[stripped_index] * sp.original_frame_period_ms)


# --- file formats ---------------------------------------------------------

PGRM_MAGIC = b"PGRM1"
PGRS_MAGIC = b"PGRS1"
FLAG_LOG = 0
FLAG_PROB = 1
_HEADER = struct.Struct("<IIdB")


def _write_vocab(fh, vocab: PhonemeVocab) -> None:
    for token in vocab.tokens:
        raw = token.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.path, self.pos = raw, path, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated while reading {what}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct, what: str):
        return st.unpack(self.take(st.size, what))


def _read_body(path, magic: bytes):
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(len(magic), "magic") != magic:
        raise BadMagic(f"{path}: expected {magic.decode()} file")
    t, d, period, flag = reader.unpack(_HEADER, "header")
    payload = reader.take(4 * t * d, "payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(t, d).astype(np.float32)
    tokens = []
    for i in range(d):
        (n,) = reader.unpack(struct.Struct("<H"), f"token {i} length")
        tokens.append(reader.take(n, f"token {i}").decode("utf-8"))
    return reader, data, period, flag, PhonemeVocab.from_tokens(tokens)


def save_posteriogram(pg: Posteriogram, path) -> None:
    data = np.ascontiguousarray(pg.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(PGRM_MAGIC)
        fh.write(_HEADER.pack(data.shape[0], data.shape[1], pg.frame_period_ms, FLAG_LOG))
        fh.write(data.tobytes())
        _write_vocab(fh, pg.vocab)


def load_posteriogram(path) -> Posteriogram:
    _, data, period, flag, vocab = _read_body(path, PGRM_MAGIC)
    if flag == FLAG_PROB:
        with np.errstate(divide="ignore"):
            data = np.log(data)
    elif flag != FLAG_LOG:
        raise FormatError(f"{path}: unknown payload flag {flag}")
    return Posteriogram(data, period, vocab)


def save_stripped(sp: StrippedPosteriogram, path) -> None:
    data = np.ascontiguousarray(sp.data, dtype="<f4").reshape(len(sp), len(sp.vocab))
    with open(path, "wb") as fh:
        fh.write(PGRS_MAGIC)
        fh.write(_HEADER.pack(data.shape[0], data.shape[1], sp.original_frame_period_ms, FLAG_PROB))
        fh.write(data.tobytes())
        _write_vocab(fh, sp.vocab)
        fh.write(np.ascontiguousarray(sp.index_map, dtype="<u4").tobytes())


def load_stripped(path) -> StrippedPosteriogram:
    reader, data, period, flag, vocab = _read_body(path, PGRS_MAGIC)
    if flag != FLAG_PROB:
        raise FormatError(f"{path}: stripped posteriograms store probabilities (flag 1), got {flag}")
    index_map = np.frombuffer(reader.take(4 * len(data), "index map"), dtype="<u4").astype(np.int64)
    return StrippedPosteriogram(data, index_map, period, vocab)
