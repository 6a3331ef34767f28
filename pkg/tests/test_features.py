import struct
from collections import Counter

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src.models.caption_item import CaptionedClip, FeatureMatrix
from src.models.configs import SyntheticSpec
from src.models.errors import (BadMagicError, FeatureFileError, NonFiniteError,
                               TruncatedPayloadError, ValidationError, ZeroExtentError)
from src.models.vocabulary import EOS, PAD, SOS, UNK, Vocabulary
from src.services.feature_service import (read_captions, read_dataset, read_feature_matrix,
                                          read_vocabulary, write_captions, write_dataset,
                                          write_feature_matrix, write_vocabulary)
from src.services.synthetic_service import (EVENT_WORDS, event_band, generate_synthetic_dataset,
                                            split_dataset)

from .conftest import tiny_spec


# *** FMAT ***
def test_fmat_single_value_file(tmp_path):
    path = write_feature_matrix(tmp_path / 'one.fmat', np.zeros((1, 1)))
    raw = path.read_bytes()
    assert len(raw) == 20
    assert raw[:4] == b'FMAT'
    assert struct.unpack('<III', raw[4:16]) == (1, 1, 1)
    assert_array_equal(read_feature_matrix(path).values, [[0.0]])


def test_fmat_round_trip_is_bit_exact(tmp_path, rng):
    values = rng.standard_normal((64, 128)).astype(np.float32)
    path = write_feature_matrix(tmp_path / 'm.fmat', FeatureMatrix(values))
    back = read_feature_matrix(path).values
    assert back.dtype == np.float32
    assert back.tobytes() == values.tobytes()


def test_fmat_round_trip_random_shapes(tmp_path, rng):
    for i in range(10):
        rows, cols = rng.integers(1, 257, size=2)
        values = (rng.standard_normal((rows, cols)) * 100).astype(np.float32)
        back = read_feature_matrix(write_feature_matrix(tmp_path / f"{i}.fmat", values)).values
        assert_array_equal(back, values)


def test_fmat_zero_extent(tmp_path):
    path = tmp_path / 'empty.fmat'
    path.write_bytes(struct.pack('<4sIII', b'FMAT', 1, 0, 5))
    with pytest.raises(ZeroExtentError, match='zero extent'):
        read_feature_matrix(path)
    with pytest.raises(ZeroExtentError, match='zero extent'):
        write_feature_matrix(tmp_path / 'w.fmat', np.zeros((0, 5)))


def test_fmat_bad_magic(tmp_path):
    path = tmp_path / 'bad.fmat'
    path.write_bytes(struct.pack('<4sIII', b'FMAX', 1, 1, 1) + b'\0' * 4)
    with pytest.raises(BadMagicError, match='bad magic'):
        read_feature_matrix(path)


def test_fmat_truncated_payload(tmp_path):
    path = tmp_path / 'short.fmat'
    path.write_bytes(struct.pack('<4sIII', b'FMAT', 1, 2, 2) + b'\0' * 12)
    with pytest.raises(TruncatedPayloadError):
        read_feature_matrix(path)
    path.write_bytes(b'FMAT\x01\x00')
    with pytest.raises(TruncatedPayloadError):
        read_feature_matrix(path)


def test_fmat_error_cases_are_distinct():
    assert not issubclass(BadMagicError, TruncatedPayloadError)
    assert not issubclass(TruncatedPayloadError, ZeroExtentError)
    for error in (BadMagicError, TruncatedPayloadError, ZeroExtentError):
        assert issubclass(error, FeatureFileError)


def test_fmat_trailing_bytes(tmp_path):
    path = write_feature_matrix(tmp_path / 'm.fmat', np.ones((2, 2)))
    path.write_bytes(path.read_bytes() + b'\0')
    with pytest.raises(FeatureFileError):
        read_feature_matrix(path)


def test_fmat_refuses_non_finite(tmp_path):
    with pytest.raises(NonFiniteError):
        write_feature_matrix(tmp_path / 'nan.fmat', np.array([[1.0, np.inf]]))


# *** 描述与词表 ***
def test_captions_round_trip_with_multiple_references(tmp_path):
    captions = {'a': [['dog', 'bell'], ['bell']], 'b': [['rain']]}
    path = write_captions(tmp_path / 'captions.tsv', captions)
    assert path.read_text(encoding='utf-8') == "a\tdog bell\na\tbell\nb\train\n"
    assert read_captions(path) == captions


def test_captions_line_without_tab(tmp_path):
    path = tmp_path / 'captions.tsv'
    path.write_text("clip0 dog\n", encoding='utf-8')
    with pytest.raises(ValidationError):
        read_captions(path)


def test_vocabulary_reserved_indices():
    vocab = Vocabulary()
    assert [vocab.index(t) for t in ('<pad>', '<sos>', '<eos>', '<unk>')] == [PAD, SOS, EOS, UNK]


def test_encode_frames_caption():
    vocab = Vocabulary.build([['dog', 'barks']])
    assert vocab.encode(['dog', 'barks']) == [SOS, vocab.index('dog'), vocab.index('barks'), EOS]
    assert vocab.encode(['cat']) == [SOS, UNK, EOS]


def test_decode_inverts_encode(rng):
    words = [f"w{i}" for i in range(12)]
    vocab = Vocabulary.build([words])
    for _ in range(100):
        caption = [words[i] for i in rng.integers(0, len(words), size=rng.integers(1, 8))]
        assert vocab.decode(vocab.encode(caption)) == caption


def test_vocabulary_maps_are_inverse():
    vocab = Vocabulary.build([['rain', 'dog'], ['bell', 'dog']])
    assert vocab.tokens[4:] == ['bell', 'dog', 'rain']
    for i, token in enumerate(vocab.tokens):
        assert vocab.index(token) == i
        assert vocab.token(i) == token


def test_vocabulary_file_round_trip(tmp_path):
    vocab = Vocabulary.build([['rain', 'dog']])
    path = write_vocabulary(tmp_path / 'vocab.txt', vocab)
    assert read_vocabulary(path) == vocab


def test_clip_requires_reference():
    with pytest.raises(ValidationError):
        CaptionedClip(id='x', features=np.ones((2, 2)), references=[])


# *** 合成数据集 ***
def test_noiseless_single_event_is_a_rectangle():
    spec = tiny_spec(n_clips=6, noise_std=0.0, min_events=1, max_events=1, event_amplitude=2.0)
    for clip in generate_synthetic_dataset(spec):
        mel = clip.features.values
        (word,) = clip.references[0]
        low, high = event_band(EVENT_WORDS.index(word), spec)
        rows, cols = np.nonzero(mel)
        assert rows.min() == low and rows.max() == high - 1
        onset, end = cols.min(), cols.max() + 1
        expected = np.zeros_like(mel)
        expected[low:high, onset:end] = 2.0
        assert_array_equal(mel, expected)


def test_generation_is_deterministic():
    first = generate_synthetic_dataset(tiny_spec(seed=3))
    second = generate_synthetic_dataset(tiny_spec(seed=3))
    other = generate_synthetic_dataset(tiny_spec(seed=4))
    assert [c.references for c in first] == [c.references for c in second]
    for a, b in zip(first, second):
        assert_array_equal(a.features.values, b.features.values)
    assert any(not np.array_equal(a.features.values, b.features.values) for a, b in zip(first, other))


def test_generation_counts_match_parameters():
    spec = tiny_spec(n_clips=9)
    clips = generate_synthetic_dataset(spec)
    assert len(clips) == 9
    assert len({c.id for c in clips}) == 9
    for clip in clips:
        assert clip.features.shape == (spec.mel_bins, spec.frames)
        assert len(clip.references) == 1
        caption = clip.references[0]
        assert spec.min_events <= len(caption) <= spec.max_events
        assert len(set(caption)) == len(caption)


def test_event_histogram_is_uniform():
    clips = generate_synthetic_dataset(SyntheticSpec(n_clips=512, n_event_types=20, frames=32, seed=42))
    counts = Counter(w for clip in clips for w in clip.references[0])
    assert len(counts) == 20
    mean = sum(counts.values()) / 20
    for count in counts.values():
        assert abs(count - mean) <= 0.2 * mean


def test_invalid_spec_is_rejected():
    with pytest.raises(ValidationError):
        generate_synthetic_dataset(tiny_spec(max_events=5))
    with pytest.raises(ValidationError):
        generate_synthetic_dataset(tiny_spec(noise_std=-1.0))


def test_split_is_seeded_and_disjoint(tiny_clips):
    train, val = split_dataset(tiny_clips, 0.25, seed=1)
    assert len(val) == 2 and len(train) == 6
    assert {c.id for c in train}.isdisjoint(c.id for c in val)
    again, _ = split_dataset(tiny_clips, 0.25, seed=1)
    assert [c.id for c in again] == [c.id for c in train]


def test_dataset_directory_round_trip(tmp_path, tiny_clips):
    write_dataset(tmp_path, tiny_clips)
    back = read_dataset(tmp_path)
    assert [c.id for c in back] == [c.id for c in tiny_clips]
    for a, b in zip(back, tiny_clips):
        assert a.references == b.references
        assert_array_equal(a.features.values, b.features.values)
