import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiasu.corpus import (Corpus, ConfigError, ManifestError, Utterance,
                          apply_missing, apply_test_missing, load_manifest,
                          make_folds, round_half_up, save_manifest, save_plan,
                          split_partition, validation_split)


# ---------------------------------------------------------------------------
# round_half_up
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("x,expected", [
    (0.0, 0), (0.4, 0), (0.5, 1), (1.5, 2), (2.5, 3),
    (0.95 * 5531, 5254),     # 5254.45
    (0.565 * 100, 57),       # binary artifact 56.4999..., decimal 56.5
    (56.49, 56),
])
def test_round_half_up(x, expected):
    assert round_half_up(x) == expected


# ---------------------------------------------------------------------------
# Manifest IO
# ---------------------------------------------------------------------------

def _write_manifest(path, rows):
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _row(i, **over):
    row = {"id": f"u{i}", "text": f"w{i} w{i+1}", "audio_path": None,
           "label": i % 2, "speaker": f"s{i % 3}", "split": None}
    row.update(over)
    return row


def test_load_manifest_counts_and_fields(tmp_path):
    path = tmp_path / "m.jsonl"
    _write_manifest(path, [_row(i) for i in range(4)])
    corpus = load_manifest(path)
    assert len(corpus) == 4
    assert corpus.by_id("u1").speaker == "s1"
    assert all(not u.has_speech for u in corpus)


def test_load_manifest_with_payloads(tmp_path):
    payload = np.arange(12, dtype=np.float32).reshape(3, 4)
    np.save(tmp_path / "u0.npy", payload)
    path = tmp_path / "m.jsonl"
    _write_manifest(path, [_row(0, audio_path="u0.npy"), _row(1)])
    corpus = load_manifest(path)
    np.testing.assert_array_equal(corpus.by_id("u0").speech, payload)
    assert corpus.by_id("u1").speech is None


def test_load_manifest_keeps_raw_audio_reference(tmp_path):
    path = tmp_path / "m.jsonl"
    _write_manifest(path, [_row(0, audio_path="clip.wav")])
    corpus = load_manifest(path)
    assert isinstance(corpus.by_id("u0").speech, str)
    assert corpus.by_id("u0").speech.endswith("clip.wav")


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps(_row(0)) + "\n{not json\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="line 2"):
        load_manifest(path)


def test_duplicate_id_rejected(tmp_path):
    path = tmp_path / "m.jsonl"
    _write_manifest(path, [_row(0), _row(0)])
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(path)


@pytest.mark.parametrize("bad", [
    {"text": ""}, {"label": -1}, {"label": "2"}, {"id": ""},
])
def test_invalid_fields_rejected(tmp_path, bad):
    path = tmp_path / "m.jsonl"
    _write_manifest(path, [_row(0, **bad)])
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_manifest_roundtrip(tmp_path, toy_corpus):
    path = tmp_path / "out.jsonl"
    save_manifest(toy_corpus, path)
    loaded = load_manifest(path)
    assert loaded.ids == toy_corpus.ids
    np.testing.assert_array_equal(loaded.by_id("u000").speech,
                                  toy_corpus.by_id("u000").speech)


# ---------------------------------------------------------------------------
# apply_missing
# ---------------------------------------------------------------------------

def _synthetic(n):
    return Corpus(tuple(
        Utterance(id=f"u{i}", text=f"w{i}", label=i % 3, speaker=f"s{i % 7}",
                  speech=np.zeros((4, 2), dtype=np.float32))
        for i in range(n)))


def test_apply_missing_p0_identity():
    part = apply_missing(_synthetic(100), 0.0, seed=7)
    assert len(part.complete) == 100
    assert len(part.text_only) == 0


def test_apply_missing_count():
    part = apply_missing(_synthetic(100), 0.95, seed=7)
    assert len(part.text_only) == 95
    assert len(part.complete) == 5


def test_apply_missing_deterministic():
    a = apply_missing(_synthetic(100), 0.95, seed=7)
    b = apply_missing(_synthetic(100), 0.95, seed=7)
    assert [u.id for u in a.text_only] == [u.id for u in b.text_only]


def test_apply_missing_strips_speech_keeps_text_and_label():
    part = apply_missing(_synthetic(50), 0.5, seed=1)
    for u in part.text_only:
        assert u.speech is None
        assert u.text
        assert u.label >= 0


def test_apply_missing_rejects_bad_p():
    with pytest.raises(ValueError):
        apply_missing(_synthetic(10), 1.5, seed=0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(4, 120), p=st.floats(0, 1), seed=st.integers(0, 2**31))
def test_partition_property(n, p, seed):
    corpus = _synthetic(n)
    part = apply_missing(corpus, p, seed)
    ids = sorted(u.id for u in part.complete) + sorted(u.id for u in part.text_only)
    assert sorted(ids) == sorted(corpus.ids)
    assert len(part.text_only) == round_half_up(p * n)


def test_train_mask_independent_of_test_stream():
    # Same seed feeds both operations; they must not interfere because they
    # draw from independently named streams.
    corpus = _synthetic(60)
    before = [u.id for u in apply_missing(corpus, 0.5, seed=3).text_only]
    apply_test_missing(corpus, 0.9, seed=3)
    after = [u.id for u in apply_missing(corpus, 0.5, seed=3).text_only]
    assert before == after


# ---------------------------------------------------------------------------
# apply_test_missing
# ---------------------------------------------------------------------------

def test_test_missing_boundaries():
    corpus = _synthetic(10)
    assert apply_test_missing(corpus, 0.0, 1).masked_ids == frozenset()
    assert apply_test_missing(corpus, 1.0, 1).masked_ids == frozenset(corpus.ids)


def test_test_missing_count_and_determinism():
    corpus = _synthetic(10)
    a = apply_test_missing(corpus, 0.7, seed=5)
    b = apply_test_missing(corpus, 0.7, seed=5)
    assert len(a.masked_ids) == 7
    assert a.masked_ids == b.masked_ids


# ---------------------------------------------------------------------------
# make_folds
# ---------------------------------------------------------------------------

def test_speaker_independent_ten_speakers_five_folds():
    # 10 speakers, 4 utterances each; every fold must hold exactly 2 speakers.
    utts = tuple(
        Utterance(id=f"u{s}_{j}", text="w1", label=0, speaker=f"spk{s}")
        for s in range(10) for j in range(4))
    corpus = Corpus(utts)
    plan = make_folds(corpus, 5, "speaker_independent", seed=0)
    fold_speakers = {f: set() for f in range(5)}
    for u in corpus:
        fold_speakers[plan.assignment[u.id]].add(u.speaker)
    assert all(len(spks) == 2 for spks in fold_speakers.values())
    # no speaker spans two folds
    for f1 in range(5):
        for f2 in range(f1 + 1, 5):
            assert not (fold_speakers[f1] & fold_speakers[f2])


def test_random_fold_sizes_balanced():
    corpus = _synthetic(10)
    plan = make_folds(corpus, 2, "random", seed=0)
    sizes = [len(plan.fold_ids(f)) for f in range(2)]
    assert sorted(sizes) == [5, 5]


def test_random_folds_cover_all_ids_with_size_spread_at_most_one():
    corpus = _synthetic(23)
    plan = make_folds(corpus, 4, "random", seed=9)
    sizes = [len(plan.fold_ids(f)) for f in range(4)]
    assert sum(sizes) == 23
    assert max(sizes) - min(sizes) <= 1


def test_fixed_manifest_assignment_copied_verbatim():
    utts = tuple(
        Utterance(id=f"u{i}", text="w1", label=0, speaker="s",
                  split=("train" if i < 6 else "test"))
        for i in range(10))
    corpus = Corpus(utts)
    plan = make_folds(corpus, 2, "fixed_manifest", seed=0)
    assert plan.fold_names == ("test", "train")
    for u in corpus:
        assert plan.fold_names[plan.assignment[u.id]] == u.split


def test_fixed_manifest_requires_split_column():
    corpus = _synthetic(5)
    with pytest.raises(ConfigError):
        make_folds(corpus, 2, "fixed_manifest", seed=0)


def test_too_few_speakers_raises():
    utts = tuple(Utterance(id=f"u{i}", text="w1", label=0, speaker="only")
                 for i in range(10))
    with pytest.raises(ConfigError, match="speakers"):
        make_folds(Corpus(utts), 2, "speaker_independent", seed=0)


def test_folds_deterministic():
    corpus = _synthetic(40)
    a = make_folds(corpus, 4, "random", seed=11)
    b = make_folds(corpus, 4, "random", seed=11)
    assert a.assignment == b.assignment


# ---------------------------------------------------------------------------
# validation split / partition split
# ---------------------------------------------------------------------------

def test_validation_split_stratified():
    corpus = _synthetic(60)  # labels 0,1,2 balanced: 20 each
    train, val = validation_split(corpus, 0.2, seed=4)
    assert len(val) == 12 and len(train) == 48
    per_label = {lab: sum(1 for u in val if u.label == lab) for lab in range(3)}
    assert per_label == {0: 4, 1: 4, 2: 4}


def test_validation_split_deterministic():
    corpus = _synthetic(30)
    a = validation_split(corpus, 0.2, seed=4)[1].ids
    b = validation_split(corpus, 0.2, seed=4)[1].ids
    assert a == b


def test_split_partition_preserves_structure():
    part = apply_missing(_synthetic(50), 0.5, seed=1)
    train_part, val_part = split_partition(part, 0.2, seed=1)
    assert train_part.total + val_part.total == 50
    train_ids = {u.id for u in train_part.complete} | {u.id for u in train_part.text_only}
    val_ids = {u.id for u in val_part.complete} | {u.id for u in val_part.text_only}
    assert not (train_ids & val_ids)
    # text-only items stay text-only after the split
    assert all(u.speech is None for u in val_part.text_only)


def test_plans_serialize_for_audit(tmp_path):
    corpus = _synthetic(12)
    part = apply_missing(corpus, 0.5, seed=2)
    plan = apply_test_missing(corpus, 0.25, seed=2)
    folds = make_folds(corpus, 3, "random", seed=2)
    for obj, name in [(part, "p.json"), (plan, "q.json"), (folds, "f.json")]:
        path = save_plan(obj, tmp_path / name)
        data = json.loads(path.read_text())
        assert data
