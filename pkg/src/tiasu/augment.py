"""LLM-assisted transcript augmentation.

Each text-only utterance gets one rephrased transcript plus K speech
candidates generated from the rephrased text. The union of original and
augmented (text, speech) pairs is sampled uniformly per epoch at
materialization time (see `tiasu.training.epoch_materialize`).

The rephrase adapter is pluggable: a canned fixture (exact transcript ->
rephrase mapping), a class-conditional token resampler for synthetic worlds,
or an external command wrapping a hosted model. Raw responses are archived
verbatim; post-processing strips quoting, collapses the response to a single
paragraph, and rejects instruction echoes. Any failure degrades that
utterance to original-only.
"""

from __future__ import annotations

import json
import logging
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .corpus import Utterance
from .pool import ExpertAdapter, SpeechCandidate, _cached_generate, AdapterFailure
from .seeding import derive_seed, named_rng
from .synth import WorldParams, _sample_tokens
from .tokens import tokenize

log = logging.getLogger(__name__)

PROMPT_PREFIX = "Don't repeat my instructions. \nRephrase the following sentence: \n"

_INSTRUCTION_MARKERS = ("Don't repeat my instructions",
                        "Rephrase the following sentence")
_QUOTE_PAIRS = (('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’"))


class RephraseFailure(RuntimeError):
    """The rephrase adapter could not produce a usable response."""


def build_prompt(text: str) -> str:
    """The exact prompt sent to the rephrasing model. Byte-stable."""
    if not text or not text.strip():
        raise ValueError("cannot build a rephrase prompt for empty text")
    return PROMPT_PREFIX + text


def extract_transcript(prompt: str) -> str:
    if not prompt.startswith(PROMPT_PREFIX):
        raise ValueError("prompt does not carry the rephrase template")
    return prompt[len(PROMPT_PREFIX):]


def postprocess_response(raw: str) -> Optional[str]:
    """Clean a raw model response; None means unusable (echo/empty)."""
    s = raw.strip()
    for opening, closing in _QUOTE_PAIRS:
        if len(s) >= 2 and s.startswith(opening) and s.endswith(closing):
            s = s[1:-1].strip()
    s = " ".join(s.split())
    if not s:
        return None
    if any(marker in s for marker in _INSTRUCTION_MARKERS):
        return None
    return s


class RephraseAdapter(Protocol):
    name: str

    def complete(self, prompt: str, label: Optional[int] = None) -> str: ...


class CannedRephraser:
    """Exact transcript -> rephrase mapping; raises on anything unmapped."""

    def __init__(self, mapping: dict[str, str], name: str = "canned"):
        self.mapping = dict(mapping)
        self.name = name

    @classmethod
    def from_json(cls, path: str | Path, name: str = "canned") -> "CannedRephraser":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), name=name)

    def complete(self, prompt: str, label: Optional[int] = None) -> str:
        text = extract_transcript(prompt)
        if text not in self.mapping:
            raise RephraseFailure(f"{self.name}: no canned response for {text!r}")
        return self.mapping[text]


class TokenResampleRephraser:
    """Desk-scale stand-in for an LLM: redraws tokens from the same class
    distribution, preserving length. Exercises the augmentation plumbing
    without changing what the transcript says about the label."""

    def __init__(self, world: WorldParams, seed: int = 0, name: str = "resample"):
        self.world = world
        self.seed = seed
        self.name = name

    def complete(self, prompt: str, label: Optional[int] = None) -> str:
        if label is None:
            raise RephraseFailure(f"{self.name}: needs the class label")
        text = extract_transcript(prompt)
        length = len(tokenize(text, self.world.vocab_size))
        rng = named_rng("rephrase", self.world.profile, self.world.seed,
                        self.seed, text, label)
        token_ids = _sample_tokens(self.world, label, length, rng)
        return " ".join(f"w{t}" for t in token_ids)


class CommandRephraser:
    """External rephraser: the prompt goes to stdin, the response is stdout."""

    def __init__(self, command: Sequence[str], name: str = "command",
                 timeout: float = 120.0):
        self.command = list(command)
        self.name = name
        self.timeout = timeout

    def complete(self, prompt: str, label: Optional[int] = None) -> str:
        try:
            result = subprocess.run(self.command, input=prompt, text=True,
                                    capture_output=True, timeout=self.timeout)
        except subprocess.TimeoutExpired as exc:
            raise RephraseFailure(f"{self.name}: timed out") from exc
        if result.returncode != 0:
            raise RephraseFailure(
                f"{self.name}: exit {result.returncode}: {result.stderr.strip()[:200]}")
        return result.stdout


@dataclass
class RephraseResult:
    text_aug: Optional[str]
    raw: Optional[str]

    @property
    def ok(self) -> bool:
        return self.text_aug is not None


def rephrase(adapter: RephraseAdapter, text: str, label: Optional[int] = None,
             retries: int = 1) -> RephraseResult:
    """Rephrase one transcript; a None text_aug means original-only fallback."""
    prompt = build_prompt(text)
    raw: Optional[str] = None
    for _ in range(retries + 1):
        try:
            raw = adapter.complete(prompt, label)
        except RephraseFailure as exc:
            log.warning("rephrase failed for %r: %s", text[:40], exc)
            continue
        cleaned = postprocess_response(raw)
        if cleaned is not None:
            return RephraseResult(text_aug=cleaned, raw=raw)
        log.warning("rephrase response rejected as echo/empty for %r", text[:40])
    return RephraseResult(text_aug=None, raw=raw)


@dataclass
class AugEntry:
    utterance_id: str
    text_orig: str
    text_aug: str
    label: int
    candidates: list[SpeechCandidate]
    raw_response_path: Optional[str] = None


@dataclass
class AugmentedSet:
    entries: dict[str, AugEntry] = field(default_factory=dict)
    adapter_name: str = ""

    def __len__(self) -> int:
        return len(self.entries)


def build_aug_set(text_only: Sequence[Utterance], adapter: RephraseAdapter,
                  experts: Sequence[ExpertAdapter], style_policy: str = "none",
                  seed: int = 0, retries: int = 1,
                  raw_dir: Optional[str | Path] = None,
                  cache_dir: Optional[str | Path] = None) -> AugmentedSet:
    """One rephrase + K generated candidates per text-only utterance.

    Labels are copied unchanged. Per-utterance failures (rephrase or all
    experts) drop the entry, leaving that utterance original-only.
    """
    raw_root = Path(raw_dir) if raw_dir is not None else None
    cache = Path(cache_dir) if cache_dir is not None else None
    aug = AugmentedSet(adapter_name=adapter.name)
    for u in text_only:
        if u.split == "test":
            raise ValueError(f"refusing to augment test utterance {u.id!r}")
        result = rephrase(adapter, u.text, u.label, retries=retries)
        if not result.ok:
            continue
        raw_path: Optional[str] = None
        if raw_root is not None and result.raw is not None:
            raw_root.mkdir(parents=True, exist_ok=True)
            target = raw_root / f"{u.id}.txt"
            target.write_text(result.raw, encoding="utf-8")
            raw_path = str(target)
        style = u.label if style_policy == "label_style" else None
        gen_seed = derive_seed("aug_pool", seed, u.id)
        candidates: list[SpeechCandidate] = []
        for expert in experts:
            try:
                payload = _cached_generate(expert, result.text_aug, style,
                                           gen_seed, cache, retries)
            except AdapterFailure as exc:
                log.warning("expert %s failed on augmented text for %s: %s",
                            expert.name, u.id, exc)
                continue
            candidates.append(SpeechCandidate(
                utterance_id=u.id, expert=expert.name, style=style,
                seed=gen_seed, payload=payload))
        if not candidates:
            log.warning("no candidates for augmented %s; original-only", u.id)
            continue
        aug.entries[u.id] = AugEntry(
            utterance_id=u.id, text_orig=u.text, text_aug=result.text_aug,
            label=u.label, candidates=candidates, raw_response_path=raw_path)
    return aug


def save_aug_set(aug: AugmentedSet, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    payload_dir = out_dir / "payloads"
    payload_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "augment.jsonl"
    with manifest.open("w", encoding="utf-8") as fh:
        for uid in sorted(aug.entries):
            entry = aug.entries[uid]
            cand_rows = []
            for cand in entry.candidates:
                fname = f"{uid}__{cand.expert}.npy"
                np.save(payload_dir / fname, cand.payload)
                cand_rows.append({"expert": cand.expert, "style": cand.style,
                                  "seed": cand.seed,
                                  "payload_path": f"payloads/{fname}"})
            fh.write(json.dumps({
                "id": uid, "text_orig": entry.text_orig, "text_aug": entry.text_aug,
                "label": entry.label, "adapter": aug.adapter_name,
                "raw_response_path": entry.raw_response_path,
                "candidates": cand_rows,
            }) + "\n")
    return manifest


def load_aug_set(out_dir: str | Path) -> AugmentedSet:
    out_dir = Path(out_dir)
    aug = AugmentedSet()
    with (out_dir / "augment.jsonl").open("r", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            candidates = [SpeechCandidate(
                utterance_id=row["id"], expert=c["expert"], style=c["style"],
                seed=c["seed"],
                payload=np.load(out_dir / c["payload_path"]).astype(np.float32),
            ) for c in row["candidates"]]
            aug.adapter_name = row["adapter"]
            aug.entries[row["id"]] = AugEntry(
                utterance_id=row["id"], text_orig=row["text_orig"],
                text_aug=row["text_aug"], label=row["label"],
                candidates=candidates,
                raw_response_path=row.get("raw_response_path"))
    return aug
