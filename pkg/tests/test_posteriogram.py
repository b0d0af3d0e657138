import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lyrictrack.errors import BadMagic, FormatError
from lyrictrack.posteriogram import (
    PhonemeVocab,
    Posteriogram,
    StrippedPosteriogram,
    is_blank,
    load_posteriogram,
    load_stripped,
    original_time_ms,
    save_posteriogram,
    save_stripped,
    strip_blanks,
    to_probabilities,
)

from conftest import random_posteriogram

VOCAB = PhonemeVocab.default()
BLANK = VOCAB.blank_index


def one_hot_rows(labels, n=60, p=0.9):
    rows = np.full((len(labels), n), (1 - p) / (n - 1))
    rows[np.arange(len(labels)), labels] = p
    return rows


def test_default_vocab_layout():
    assert len(VOCAB) == 60
    assert VOCAB.tokens[-3:] == ("<space>", "<instrumental>", "<blank>")
    assert (VOCAB.space_index, VOCAB.instrumental_index, VOCAB.blank_index) == (57, 58, 59)


def test_vocab_rejects_duplicates():
    with pytest.raises(ValueError):
        PhonemeVocab.from_tokens(["a", "a", "b", "c"])


def test_uniform_log_row_gives_uniform_probabilities():
    pg = Posteriogram(np.full((2, 60), np.log(1 / 60)))
    np.testing.assert_allclose(to_probabilities(pg), 1 / 60)


def test_log_zero_at_index_gives_probability_one():
    row = np.full((1, 60), -np.inf)
    row[0, 7] = 0.0
    probs = to_probabilities(Posteriogram(row))
    assert probs[0, 7] == 1.0 and probs.sum() == 1.0


def test_log_prob_log_roundtrip(rng):
    pg = random_posteriogram(rng, 30)
    back = np.log(to_probabilities(pg))
    np.testing.assert_allclose(back, pg.data, atol=1e-6)
    np.testing.assert_allclose(to_probabilities(pg).sum(axis=1), 1.0, atol=1e-5)


def test_strip_phoneme_blank_phoneme():
    pg = Posteriogram.from_probabilities(one_hot_rows([3, BLANK, 5]))
    sp = strip_blanks(pg)
    assert len(sp) == 2
    assert list(sp.index_map) == [0, 2]


def test_no_blank_frames_is_identity(rng):
    pg = random_posteriogram(rng, 20, blank_free=True)
    sp = strip_blanks(pg)
    assert list(sp.index_map) == list(range(20))
    np.testing.assert_array_equal(sp.data, to_probabilities(pg))


def test_blank_just_below_best_phoneme_is_kept():
    row = np.full(60, 0.31 / 58)
    row[BLANK] = 0.34
    row[4] = 0.35
    sp = strip_blanks(Posteriogram.from_probabilities(row[None]))
    assert len(sp) == 1


def test_argmax_ties_go_to_lower_index():
    row = np.zeros(60)
    row[[2, BLANK]] = 0.5
    assert not is_blank(row, VOCAB)


def test_original_time():
    sp = StrippedPosteriogram(np.zeros((2, 60)), [0, 2], 40.0)
    assert original_time_ms(sp, 1) == 80.0
    assert original_time_ms(sp, 0) == 0.0
    with pytest.raises(IndexError):
        original_time_ms(sp, 2)


def test_identity_index_map_times(rng):
    sp = strip_blanks(random_posteriogram(rng, 15, blank_free=True))
    assert [original_time_ms(sp, i) for i in range(15)] == [40.0 * i for i in range(15)]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(0, 80), sharp=st.floats(0, 6))
def test_strip_invariants(seed, n, sharp):
    rng = np.random.default_rng(seed)
    pg = random_posteriogram(rng, n, sharpness=sharp)
    # bias some rows towards blank so both branches are exercised
    data = pg.data.copy()
    data[::3, BLANK] += 4.0
    pg = Posteriogram(data - np.log(np.exp(data).sum(axis=1, keepdims=True)) if n else data)
    sp = strip_blanks(pg)
    n_blank = int(np.sum(np.argmax(pg.data, axis=1) == BLANK)) if n else 0
    assert len(sp) + n_blank == n
    again = strip_blanks(sp)
    assert again.data.tobytes() == sp.data.tobytes()
    assert list(again.index_map) == list(sp.index_map)


def test_stripping_is_frame_local(rng):
    # streaming use: stripping frame by frame selects the same frames
    pg = random_posteriogram(rng, 50)
    sp = strip_blanks(pg)
    kept = [i for i, row in enumerate(to_probabilities(pg)) if not is_blank(row, VOCAB)]
    assert kept == list(sp.index_map)


def test_posteriogram_roundtrip(tmp_path, rng):
    pg = Posteriogram(rng.normal(size=(33, 60)).astype(np.float32), 40.0, VOCAB)
    save_posteriogram(pg, tmp_path / "a.pgrm")
    back = load_posteriogram(tmp_path / "a.pgrm")
    assert back.data.tobytes() == pg.data.tobytes()
    assert back.vocab == VOCAB and back.frame_period_ms == 40.0


def test_stripped_roundtrip(tmp_path, rng):
    sp = strip_blanks(random_posteriogram(rng, 40))
    sp = StrippedPosteriogram(sp.data.astype(np.float32), sp.index_map, 40.0, VOCAB)
    save_stripped(sp, tmp_path / "a.pgrs")
    back = load_stripped(tmp_path / "a.pgrs")
    assert back.data.tobytes() == sp.data.tobytes()
    assert list(back.index_map) == list(sp.index_map)


def test_format_errors(tmp_path, rng):
    pg = Posteriogram(rng.normal(size=(5, 60)).astype(np.float32))
    save_posteriogram(pg, tmp_path / "a.pgrm")
    raw = (tmp_path / "a.pgrm").read_bytes()
    (tmp_path / "cut.pgrm").write_bytes(raw[:100])
    with pytest.raises(FormatError, match="truncated"):
        load_posteriogram(tmp_path / "cut.pgrm")
    with pytest.raises(BadMagic):
        load_stripped(tmp_path / "a.pgrm")


def test_shape_checks():
    with pytest.raises(ValueError):
        Posteriogram(np.zeros((3, 59)))
    with pytest.raises(ValueError):
        StrippedPosteriogram(np.zeros((2, 60)), [1, 1])
