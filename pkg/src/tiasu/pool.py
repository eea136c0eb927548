"""Generation pool: per text-only utterance, one speech candidate per expert.

`build_pool` fans the transcripts out to a bank of expert adapters (in-process
synthetic generators, recorded fixtures, or external commands) and collects K
candidates per utterance. Failures are retried within a budget; an utterance
whose every adapter fails is flagged unimputable and falls back to zero-fill
at training time. Test-split utterances are rejected outright: generated
speech never touches evaluation data.

Candidates are cached on disk keyed by (adapter, text hash, style, seed), so
repeated runs replay bit-identically instead of re-invoking expensive
generators.
"""

from __future__ import annotations

import hashlib
import json
import logging
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .corpus import PartitionedCorpus, Utterance, round_half_up
from .seeding import derive_seed, named_rng
from .synth import WorldParams, expert_generate

log = logging.getLogger(__name__)

STYLE_POLICIES = ("none", "label_style")
IMPUTE_POLICIES = ("tts", "zero", "drop")


class PoolError(ValueError):
    """A pool request that cannot be satisfied."""


class AdapterFailure(RuntimeError):
    """An expert adapter failed to produce a payload."""


@dataclass
class SpeechCandidate:
    utterance_id: str
    expert: str
    style: Optional[int]
    seed: int
    payload: np.ndarray

    @property
    def origin(self) -> str:
        style = "-" if self.style is None else str(self.style)
        return f"expert:{self.expert}:{style}:{self.seed}"


@dataclass
class GenerationPool:
    entries: dict[str, list[SpeechCandidate]]
    experts: tuple[str, ...]
    style_policy: str
    unimputable: set[str] = field(default_factory=set)

    def candidates(self, uid: str) -> list[SpeechCandidate]:
        if uid not in self.entries:
            raise PoolError(f"no pool entry for utterance {uid!r}")
        return self.entries[uid]

    @property
    def n_candidates(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def coverage(self, ids: Sequence[str]) -> float:
        if not ids:
            return 1.0
        covered = sum(1 for uid in ids if self.entries.get(uid))
        return covered / len(ids)


class ExpertAdapter(Protocol):
    name: str

    def generate(self, text: str, style: Optional[int], seed: int) -> np.ndarray: ...


class SyntheticExpert:
    """In-process expert over a synthetic world."""

    def __init__(self, world: WorldParams, expert_id: int, name: Optional[str] = None):
        self.world = world
        self.expert_id = expert_id
        self.name = name or f"synth{expert_id}"

    def generate(self, text: str, style: Optional[int], seed: int) -> np.ndarray:
        return expert_generate(self.world, self.expert_id, text, style=style, seed=seed)


def synthetic_experts(world: WorldParams) -> list[SyntheticExpert]:
    return [SyntheticExpert(world, k) for k in range(world.n_experts)]


class FixtureExpert:
    """Replays recorded generations from disk; raises on anything unrecorded."""

    def __init__(self, root: str | Path, name: str = "fixture"):
        self.root = Path(root)
        self.name = name

    def _path(self, text: str, style: Optional[int], seed: int) -> Path:
        return self.root / f"{self.name}__{_text_key(text)}__{style}__{seed}.npy"

    def generate(self, text: str, style: Optional[int], seed: int) -> np.ndarray:
        path = self._path(text, style, seed)
        if not path.exists():
            raise AdapterFailure(f"{self.name}: no recorded generation at {path}")
        return np.load(path).astype(np.float32)

    def record(self, text: str, style: Optional[int], seed: int,
               payload: np.ndarray) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self._path(text, style, seed)
        np.save(path, payload.astype(np.float32))
        return path


class CommandExpert:
    """External generator invoked as a subprocess.

    The request {"text", "style", "seed"} goes to stdin as JSON; the command
    must reply on stdout with either {"frames": [[...], ...]} or
    {"path": "<file.npy>"}.
    """

    def __init__(self, command: Sequence[str], name: str = "command",
                 timeout: float = 60.0):
        self.command = list(command)
        self.name = name
        self.timeout = timeout

    def generate(self, text: str, style: Optional[int], seed: int) -> np.ndarray:
        request = json.dumps({"text": text, "style": style, "seed": seed})
        try:
            result = subprocess.run(self.command, input=request, text=True,
                                    capture_output=True, timeout=self.timeout)
        except subprocess.TimeoutExpired as exc:
            raise AdapterFailure(f"{self.name}: timed out after {self.timeout}s") from exc
        if result.returncode != 0:
            raise AdapterFailure(
                f"{self.name}: exit {result.returncode}: {result.stderr.strip()[:200]}")
        try:
            reply = json.loads(result.stdout)
        except json.JSONDecodeError as exc:
            raise AdapterFailure(f"{self.name}: non-JSON reply") from exc
        if "frames" in reply:
            return np.asarray(reply["frames"], dtype=np.float32)
        if "path" in reply:
            return np.load(reply["path"]).astype(np.float32)
        raise AdapterFailure(f"{self.name}: reply has neither 'frames' nor 'path'")


def _text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _cached_generate(adapter: ExpertAdapter, text: str, style: Optional[int],
                     seed: int, cache_dir: Optional[Path], retries: int) -> np.ndarray:
    if cache_dir is not None:
        cache_path = cache_dir / f"{adapter.name}__{_text_key(text)}__{style}__{seed}.npy"
        if cache_path.exists():
            return np.load(cache_path).astype(np.float32)
    last: Optional[Exception] = None
    for _ in range(retries + 1):
        try:
            payload = np.asarray(adapter.generate(text, style, seed), dtype=np.float32)
            break
        except AdapterFailure as exc:
            last = exc
    else:
        raise AdapterFailure(str(last))
    if payload.ndim != 2:
        raise AdapterFailure(f"{adapter.name}: payload must be 2-D, got {payload.shape}")
    if not np.isfinite(payload).all():
        raise AdapterFailure(f"{adapter.name}: payload contains NaN or Inf")
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        np.save(cache_path, payload)
    return payload


def build_pool(text_only: Sequence[Utterance], adapters: Sequence[ExpertAdapter],
               style_policy: str = "none", seed: int = 0, retries: int = 1,
               cache_dir: Optional[str | Path] = None) -> GenerationPool:
    """Generate one candidate per (utterance, expert).

    Per-utterance generation seeds derive from (seed, utterance id), so the
    pool is reproducible regardless of iteration order.
    """
    if not adapters:
        raise PoolError("at least one expert adapter is required")
    if style_policy not in STYLE_POLICIES:
        raise PoolError(f"unknown style_policy {style_policy!r}")
    cache = Path(cache_dir) if cache_dir is not None else None
    entries: dict[str, list[SpeechCandidate]] = {}
    unimputable: set[str] = set()
    for u in text_only:
        if u.split == "test":
            raise PoolError(f"refusing to build pool entry for test utterance {u.id!r}")
        if not u.text.strip():
            raise PoolError(f"utterance {u.id!r} has no text to generate from")
        style = u.label if style_policy == "label_style" else None
        gen_seed = derive_seed("pool", seed, u.id)
        candidates: list[SpeechCandidate] = []
        for adapter in adapters:
            try:
                payload = _cached_generate(adapter, u.text, style, gen_seed,
                                           cache, retries)
            except AdapterFailure as exc:
                log.warning("expert %s failed for %s: %s", adapter.name, u.id, exc)
                continue
            candidates.append(SpeechCandidate(
                utterance_id=u.id, expert=adapter.name, style=style,
                seed=gen_seed, payload=payload))
        entries[u.id] = candidates
        if not candidates:
            unimputable.add(u.id)
            log.warning("utterance %s is unimputable (all experts failed); "
                        "will zero-fill at training time", u.id)
    return GenerationPool(entries=entries,
                          experts=tuple(a.name for a in adapters),
                          style_policy=style_policy, unimputable=unimputable)


def sample_imputation(pool: GenerationPool, utterance_id: str,
                      rng: np.random.Generator) -> SpeechCandidate:
    """Uniform stream-deterministic choice among an utterance's candidates."""
    candidates = pool.candidates(utterance_id)
    if not candidates:
        raise PoolError(f"utterance {utterance_id!r} has no usable candidates")
    return candidates[int(rng.integers(len(candidates)))]


# ---------------------------------------------------------------------------
# Zero-filling and dataset assembly
# ---------------------------------------------------------------------------

def zero_fill(utterance: Utterance, nominal_frames: int, dim: int = 16) -> Utterance:
    """Attach an all-zero frame matrix to a speech-less utterance."""
    if utterance.speech is not None:
        raise ValueError(f"utterance {utterance.id!r} already has speech")
    payload = np.zeros((nominal_frames, dim), dtype=np.float32)
    return replace(utterance, speech=payload, provenance="zero_filled")


def median_frame_count(utterances: Sequence[Utterance], default: int = 32) -> int:
    """Median payload length of the modality-complete set (half-up on ties)."""
    lengths = [u.speech.shape[0] for u in utterances
               if isinstance(u.speech, np.ndarray)]
    if not lengths:
        return default
    return round_half_up(float(np.median(lengths)))


@dataclass
class DatasetView:
    """A lazily-imputed training dataset; see `tiasu.training.epoch_materialize`.

    Under the ``tts`` policy, candidate selection happens per epoch; ``zero``
    attaches the all-zero payload; ``drop`` keeps only the complete subset.
    """

    partition: PartitionedCorpus
    policy: str
    pool: Optional[GenerationPool] = None
    nominal_frames: int = 32
    dim: int = 16
    coverage_gaps: set[str] = field(default_factory=set)

    @property
    def n_examples(self) -> int:
        if self.policy == "drop":
            return len(self.partition.complete)
        return self.partition.total


def impute_dataset(partition: PartitionedCorpus, pool: Optional[GenerationPool],
                   policy: str, dim: int = 16) -> DatasetView:
    """Assemble the training view for one imputation policy."""
    if policy not in IMPUTE_POLICIES:
        raise PoolError(f"unknown policy {policy!r}; expected one of {IMPUTE_POLICIES}")
    nominal = median_frame_count(partition.complete)
    gaps: set[str] = set()
    if policy == "tts":
        if pool is None:
            raise PoolError("policy 'tts' requires a generation pool")
        for u in partition.text_only:
            if not pool.entries.get(u.id):
                gaps.add(u.id)
        if gaps:
            log.warning("pool covers %d/%d text-only utterances; %d will be "
                        "zero-filled", len(partition.text_only) - len(gaps),
                        len(partition.text_only), len(gaps))
    return DatasetView(partition=partition, policy=policy, pool=pool,
                       nominal_frames=nominal, dim=dim, coverage_gaps=gaps)


# ---------------------------------------------------------------------------
# Pool persistence
# ---------------------------------------------------------------------------

def save_pool(pool: GenerationPool, out_dir: str | Path) -> Path:
    """Write the pool manifest (JSONL) plus one .npy payload per candidate."""
    out_dir = Path(out_dir)
    payload_dir = out_dir / "payloads"
    payload_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "pool.jsonl"
    with manifest.open("w", encoding="utf-8") as fh:
        for uid in sorted(pool.entries):
            for cand in pool.entries[uid]:
                fname = f"{uid}__{cand.expert}.npy"
                np.save(payload_dir / fname, cand.payload)
                fh.write(json.dumps({
                    "id": uid, "expert": cand.expert, "style": cand.style,
                    "payload_path": f"payloads/{fname}", "seed": cand.seed,
                }) + "\n")
    meta = {"experts": list(pool.experts), "style_policy": pool.style_policy,
            "unimputable": sorted(pool.unimputable)}
    (out_dir / "pool_meta.json").write_text(json.dumps(meta, indent=2) + "\n",
                                            encoding="utf-8")
    return manifest


def load_pool(pool_dir: str | Path) -> GenerationPool:
    pool_dir = Path(pool_dir)
    meta = json.loads((pool_dir / "pool_meta.json").read_text(encoding="utf-8"))
    entries: dict[str, list[SpeechCandidate]] = {}
    with (pool_dir / "pool.jsonl").open("r", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            payload = np.load(pool_dir / row["payload_path"]).astype(np.float32)
            entries.setdefault(row["id"], []).append(SpeechCandidate(
                utterance_id=row["id"], expert=row["expert"], style=row["style"],
                seed=row["seed"], payload=payload))
    return GenerationPool(entries=entries, experts=tuple(meta["experts"]),
                          style_policy=meta["style_policy"],
                          unimputable=set(meta["unimputable"]))
