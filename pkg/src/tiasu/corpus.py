"""Corpus loading, missing-speech masking, and cross-validation splits.

A corpus is an immutable list of utterances loaded from a JSONL manifest.
Training-side speech removal (`apply_missing`), test-side masking
(`apply_test_missing`), fold construction (`make_folds`), and the stratified
validation split are all pure functions of their inputs and a seed, each on
its own named RNG stream (see `tiasu.seeding`).

Manifest schema (one JSON object per line):

    {"id": str, "text": str, "audio_path": str|null, "label": int,
     "speaker": str, "split": str|null}

``audio_path`` ending in ``.npy`` is loaded eagerly as a frame matrix;
any other non-null path is kept as a reference for a full-scale encoder
adapter to resolve. Fold and masking plans serialize to JSON for audit.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from .seeding import named_rng

PROVENANCE_VALUES = ("real", "generated", "zero_filled")
SPLIT_SCHEMES = ("speaker_independent", "random", "fixed_manifest")

SpeechPayload = Union[np.ndarray, str]


class ManifestError(ValueError):
    """Malformed or inconsistent manifest content."""


class ConfigError(ValueError):
    """A split/masking request that cannot be satisfied."""


def round_half_up(x: float) -> int:
    """Round with ties going up: 2.5 -> 3, 56.5 -> 57.

    The input is first snapped to 9 decimals so that products like
    0.565 * 100 (= 56.499999999999993 in binary) round as their decimal
    value would.
    """
    return int(math.floor(round(x, 9) + 0.5))


@dataclass
class Utterance:
    """One sample: transcript, optional speech payload, label, provenance."""

    id: str
    text: str
    label: int
    speaker: str = ""
    speech: Optional[SpeechPayload] = None
    split: Optional[str] = None
    provenance: str = "real"

    @property
    def has_speech(self) -> bool:
        return self.speech is not None

    def without_speech(self) -> "Utterance":
        return replace(self, speech=None)


@dataclass(frozen=True)
class Corpus:
    utterances: tuple[Utterance, ...]
    name: str = "corpus"
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        index = {u.id: u for u in self.utterances}
        if len(index) != len(self.utterances):
            raise ManifestError("duplicate utterance ids in corpus")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def by_id(self, uid: str) -> Utterance:
        return self._index[uid]

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.utterances]

    @property
    def n_classes(self) -> int:
        return max(u.label for u in self.utterances) + 1

    @property
    def speakers(self) -> set[str]:
        return {u.speaker for u in self.utterances}

    def subset(self, ids: set[str], name: Optional[str] = None) -> "Corpus":
        kept = tuple(u for u in self.utterances if u.id in ids)
        return Corpus(kept, name or self.name)


@dataclass(frozen=True)
class PartitionedCorpus:
    """Training data split into modality-complete and text-only parts.

    ``complete`` keeps its speech; ``text_only`` has speech stripped but
    retains transcript and label. Together they partition the source corpus.
    """

    complete: tuple[Utterance, ...]
    text_only: tuple[Utterance, ...]
    p: float
    seed: int

    @property
    def total(self) -> int:
        return len(self.complete) + len(self.text_only)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "seed": self.seed,
            "complete_ids": [u.id for u in self.complete],
            "text_only_ids": [u.id for u in self.text_only],
        }


@dataclass(frozen=True)
class SplitPlan:
    k: int
    assignment: dict[str, int]
    scheme: str
    seed: int = 0
    fold_names: Optional[tuple[str, ...]] = None

    def fold_ids(self, fold: int) -> set[str]:
        return {uid for uid, f in self.assignment.items() if f == fold}

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "scheme": self.scheme,
            "seed": self.seed,
            "fold_names": list(self.fold_names) if self.fold_names else None,
            "assignment": dict(sorted(self.assignment.items())),
        }


@dataclass(frozen=True)
class TestMissingPlan:
    q: float
    seed: int
    masked_ids: frozenset[str]

    def is_masked(self, uid: str) -> bool:
        return uid in self.masked_ids

    def to_dict(self) -> dict:
        return {"q": self.q, "seed": self.seed, "masked_ids": sorted(self.masked_ids)}


# ---------------------------------------------------------------------------
# Manifest IO
# ---------------------------------------------------------------------------

def _parse_row(row: dict, lineno: int, base_dir: Path) -> Utterance:
    try:
        uid = row["id"]
        text = row["text"]
        label = row["label"]
    except KeyError as exc:
        raise ManifestError(f"line {lineno}: missing field {exc}") from None
    if not isinstance(uid, str) or not uid:
        raise ManifestError(f"line {lineno}: id must be a non-empty string")
    if not isinstance(text, str) or not text.strip():
        raise ManifestError(f"line {lineno}: text must be non-empty")
    if not isinstance(label, int) or isinstance(label, bool) or label < 0:
        raise ManifestError(f"line {lineno}: label must be a non-negative int")
    speaker = row.get("speaker") or ""
    split = row.get("split")
    audio_path = row.get("audio_path")
    speech: Optional[SpeechPayload] = None
    if audio_path is not None:
        if not isinstance(audio_path, str):
            raise ManifestError(f"line {lineno}: audio_path must be a string or null")
        resolved = Path(audio_path)
        if not resolved.is_absolute():
            resolved = base_dir / resolved
        if resolved.suffix == ".npy":
            if not resolved.exists():
                raise ManifestError(f"line {lineno}: payload not found: {resolved}")
            speech = np.load(resolved).astype(np.float32)
        else:
            # Raw-audio reference; decoding is the encoder adapter's job.
            speech = str(resolved)
    return Utterance(id=uid, text=text, label=label, speaker=speaker,
                     speech=speech, split=split)


def load_manifest(path: str | Path, name: Optional[str] = None) -> Corpus:
    """Load a JSONL manifest. Raises `ManifestError` with the offending line."""
    path = Path(path)
    utterances = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(row, dict):
                raise ManifestError(f"line {lineno}: expected a JSON object")
            utt = _parse_row(row, lineno, path.parent)
            if utt.id in seen:
                raise ManifestError(f"line {lineno}: duplicate id {utt.id!r}")
            seen.add(utt.id)
            utterances.append(utt)
    return Corpus(tuple(utterances), name or path.stem)


def save_manifest(corpus: Corpus, path: str | Path,
                  payload_dir: Optional[str | Path] = None) -> Path:
    """Write a corpus back to JSONL, saving array payloads as .npy sidecars."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if payload_dir is None:
        payload_dir = path.parent / f"{path.stem}_payloads"
    payload_dir = Path(payload_dir)
    with path.open("w", encoding="utf-8") as fh:
        for u in corpus:
            audio_path = None
            if isinstance(u.speech, np.ndarray):
                payload_dir.mkdir(parents=True, exist_ok=True)
                target = payload_dir / f"{u.id}.npy"
                np.save(target, u.speech.astype(np.float32))
                audio_path = str(target.relative_to(path.parent))
            elif isinstance(u.speech, str):
                audio_path = u.speech
            row = {"id": u.id, "text": u.text, "audio_path": audio_path,
                   "label": u.label, "speaker": u.speaker, "split": u.split}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


# ---------------------------------------------------------------------------
# Missing-speech masking
# ---------------------------------------------------------------------------

def apply_missing(corpus: Corpus, p: float, seed: int) -> PartitionedCorpus:
    """Strip speech from a seeded uniform sample of round_half_up(p*N) utterances.

    Draws from the "train_missing" stream, so test-side masking with any q
    never changes the training mask. Samples for different p values are
    independent (no nesting across p).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    n = len(corpus)
    n_missing = round_half_up(p * n)
    rng = named_rng("train_missing", seed)
    chosen = set(rng.choice(n, size=n_missing, replace=False).tolist())
    complete, text_only = [], []
    for i, u in enumerate(corpus):
        if i in chosen:
            text_only.append(u.without_speech())
        else:
            complete.append(u)
    return PartitionedCorpus(tuple(complete), tuple(text_only), p=p, seed=seed)


def apply_test_missing(test: Corpus, q: float, seed: int) -> TestMissingPlan:
    """Choose which test utterances have speech withheld at inference time."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    n = len(test)
    n_masked = round_half_up(q * n)
    rng = named_rng("test_missing", seed)
    idx = rng.choice(n, size=n_masked, replace=False)
    masked = frozenset(test.utterances[i].id for i in idx)
    return TestMissingPlan(q=q, seed=seed, masked_ids=masked)


# ---------------------------------------------------------------------------
# Fold construction
# ---------------------------------------------------------------------------

def make_folds(corpus: Corpus, k: int, scheme: str = "speaker_independent",
               seed: int = 0) -> SplitPlan:
    """Build a k-fold cross-validation plan.

    random: shuffled round-robin, fold sizes differ by at most 1.
    speaker_independent: speakers are shuffled then greedily assigned
        (largest first) to the lightest fold, so no speaker spans two folds.
    fixed_manifest: the manifest's ``split`` column is copied verbatim;
        fold index is the position of the split name in sorted order.
    """
    if scheme not in SPLIT_SCHEMES:
        raise ConfigError(f"unknown split scheme {scheme!r}")
    if scheme == "fixed_manifest":
        missing = [u.id for u in corpus if u.split is None]
        if missing:
            raise ConfigError(
                f"fixed_manifest scheme requires a split for every row; "
                f"{len(missing)} rows lack one (first: {missing[0]})")
        names = tuple(sorted({u.split for u in corpus}))
        assignment = {u.id: names.index(u.split) for u in corpus}
        return SplitPlan(k=len(names), assignment=assignment,
                         scheme=scheme, seed=seed, fold_names=names)

    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    rng = named_rng("folds", seed, scheme, k)

    if scheme == "random":
        order = rng.permutation(len(corpus))
        assignment = {corpus.utterances[j].id: i % k for i, j in enumerate(order)}
        return SplitPlan(k=k, assignment=assignment, scheme=scheme, seed=seed)

    # speaker_independent
    groups: dict[str, list[str]] = defaultdict(list)
    for u in corpus:
        groups[u.speaker].append(u.id)
    speakers = sorted(groups)
    if len(speakers) < k:
        raise ConfigError(
            f"speaker_independent needs >= {k} speakers, found {len(speakers)}")
    rng.shuffle(speakers)
    # Largest groups first (stable w.r.t. the shuffle), each into the
    # currently lightest fold; ties broken by fold index.
    speakers.sort(key=lambda s: -len(groups[s]))
    fold_sizes = [0] * k
    assignment: dict[str, int] = {}
    for spk in speakers:
        fold = min(range(k), key=lambda f: (fold_sizes[f], f))
        fold_sizes[fold] += len(groups[spk])
        for uid in groups[spk]:
            assignment[uid] = fold
    return SplitPlan(k=k, assignment=assignment, scheme=scheme, seed=seed)


def validation_split(corpus: Corpus, fraction: float = 0.2,
                     seed: int = 0) -> tuple[Corpus, Corpus]:
    """Seeded random split into (train, validation), stratified by label.

    Per class, round_half_up(fraction * n_class) utterances go to validation,
    capped so that at least one per class stays in training.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    rng = named_rng("val_split", seed, fraction)
    by_label: dict[int, list[Utterance]] = defaultdict(list)
    for u in corpus:
        by_label[u.label].append(u)
    val_ids: set[str] = set()
    for label in sorted(by_label):
        members = by_label[label]
        n_val = min(round_half_up(fraction * len(members)), len(members) - 1)
        n_val = max(n_val, 0)
        idx = rng.choice(len(members), size=n_val, replace=False)
        val_ids.update(members[i].id for i in idx)
    train = tuple(u for u in corpus if u.id not in val_ids)
    val = tuple(u for u in corpus if u.id in val_ids)
    return (Corpus(train, f"{corpus.name}-train"), Corpus(val, f"{corpus.name}-val"))


def split_partition(partition: PartitionedCorpus, fraction: float = 0.2,
                    seed: int = 0) -> tuple[PartitionedCorpus, PartitionedCorpus]:
    """Carve a stratified validation share out of a partitioned corpus.

    Both halves keep the partition's complete/text-only structure, so the
    validation view can be materialized under the same imputation policy as
    training.
    """
    union = Corpus(tuple(partition.complete) + tuple(partition.text_only), "partition")
    _, val = validation_split(union, fraction, seed)
    val_ids = set(val.ids)

    def filtered(utts: tuple[Utterance, ...], keep_val: bool) -> tuple[Utterance, ...]:
        return tuple(u for u in utts if (u.id in val_ids) == keep_val)

    train_part = PartitionedCorpus(filtered(partition.complete, False),
                                   filtered(partition.text_only, False),
                                   p=partition.p, seed=partition.seed)
    val_part = PartitionedCorpus(filtered(partition.complete, True),
                                 filtered(partition.text_only, True),
                                 p=partition.p, seed=partition.seed)
    return train_part, val_part


def save_plan(plan: PartitionedCorpus | SplitPlan | TestMissingPlan,
              path: str | Path) -> Path:
    """Serialize any partition/split/masking plan to JSON for audit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(plan.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path
