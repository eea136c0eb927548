"""Controlled synthetic worlds with known text/speech label structure.

A world fixes, once and for all, how transcripts and speech frames are
generated for each class, plus a bank of synthetic speech-generation experts.
Two task profiles control where the label information lives:

content_dominant
    The transcript pins down the label (class-specific token blocks dominate);
    true speech carries the same content, corrupted by noise, and no prosody
    cue. Text is at least as informative as speech.

prosody_dominant
    Transcripts are only weakly class-correlated; a per-class prosody vector
    added to every speech frame carries most of the label information. Speech
    is strictly more informative than text, and any generator that sees only
    the transcript cannot reproduce the prosody cue.

Everything is derived from (profile, seed) via named RNG streams, so a world
serializes to JSON and reconstructs bit-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import Corpus, Utterance
from .seeding import named_rng
from .tokens import tokenize

PROFILES = ("content_dominant", "prosody_dominant")

# Per-profile knobs: how much of the token distribution is class-specific,
# how strongly the class prosody vector is mixed into speech frames, and the
# base frame noise. The text->frames map is low-rank in both profiles, so
# speech is always a lossy rendering of the transcript: in content_dominant
# worlds that makes text strictly the better modality, in prosody_dominant
# worlds the prosody cue more than compensates.
_PROFILE_CONTENT_WEIGHT = {"content_dominant": 0.9, "prosody_dominant": 0.55}
_PROFILE_PROSODY_WEIGHT = {"content_dominant": 0.0, "prosody_dominant": 1.0}
_PROFILE_NOISE_SIGMA = {"content_dominant": 0.8, "prosody_dominant": 0.6}
_PROFILE_PROSODY_SCALE = {"content_dominant": 1.6, "prosody_dominant": 0.9}
# Per-utterance jitter on the prosody vector (constant across frames, so it
# never averages out): caps how well speech alone can decode the label.
_PROFILE_PROSODY_JITTER = {"content_dominant": 0.0, "prosody_dominant": 0.4}


@dataclass
class ExpertParams:
    """One synthetic speech generator: a timbre transform, an additive bias,
    and its own noise scale (multiples of the world's base sigma)."""

    bias: np.ndarray          # (D,)
    timbre: np.ndarray        # (D, D), near identity
    noise_scale: float

    def to_dict(self) -> dict:
        return {"bias": self.bias.tolist(), "timbre": self.timbre.tolist(),
                "noise_scale": self.noise_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertParams":
        return cls(bias=np.asarray(d["bias"], dtype=np.float64),
                   timbre=np.asarray(d["timbre"], dtype=np.float64),
                   noise_scale=float(d["noise_scale"]))


@dataclass
class WorldParams:
    """Frozen generative parameters of one synthetic world."""

    profile: str
    seed: int
    n_classes: int
    vocab_size: int
    n_frames: int
    frame_dim: int
    text_len_min: int
    text_len_max: int
    content_weight: float
    prosody_weight: float
    noise_sigma: float
    content_rank: int
    prosody_jitter: float
    token_embed: np.ndarray       # (V, D)
    text_map: np.ndarray          # (D, D), rank content_rank
    prosody_vectors: np.ndarray   # (C, D)
    experts: list[ExpertParams] = field(default_factory=list)

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "vocab_size": self.vocab_size,
            "n_frames": self.n_frames,
            "frame_dim": self.frame_dim,
            "text_len_min": self.text_len_min,
            "text_len_max": self.text_len_max,
            "content_weight": self.content_weight,
            "prosody_weight": self.prosody_weight,
            "noise_sigma": self.noise_sigma,
            "content_rank": self.content_rank,
            "prosody_jitter": self.prosody_jitter,
            "token_embed": self.token_embed.tolist(),
            "text_map": self.text_map.tolist(),
            "prosody_vectors": self.prosody_vectors.tolist(),
            "experts": [e.to_dict() for e in self.experts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldParams":
        return cls(
            profile=d["profile"],
            seed=d["seed"],
            n_classes=d["n_classes"],
            vocab_size=d["vocab_size"],
            n_frames=d["n_frames"],
            frame_dim=d["frame_dim"],
            text_len_min=d["text_len_min"],
            text_len_max=d["text_len_max"],
            content_weight=d["content_weight"],
            prosody_weight=d["prosody_weight"],
            noise_sigma=d["noise_sigma"],
            content_rank=d["content_rank"],
            prosody_jitter=d["prosody_jitter"],
            token_embed=np.asarray(d["token_embed"], dtype=np.float64),
            text_map=np.asarray(d["text_map"], dtype=np.float64),
            prosody_vectors=np.asarray(d["prosody_vectors"], dtype=np.float64),
            experts=[ExpertParams.from_dict(e) for e in d["experts"]],
        )


def make_world(profile: str, seed: int, n_classes: int = 4, n_experts: int = 3,
               vocab_size: int = 64, n_frames: int = 32, frame_dim: int = 16,
               noise_sigma: Optional[float] = None,
               content_rank: int = 6) -> WorldParams:
    """Construct a world deterministically from (profile, seed)."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if n_experts < 1:
        raise ValueError("n_experts must be >= 1")
    if noise_sigma is None:
        noise_sigma = _PROFILE_NOISE_SIGMA[profile]
    d = frame_dim
    rng = named_rng("world", profile, seed)
    token_embed = rng.normal(0.0, 1.0, size=(vocab_size, d))
    # Low-rank map: entry variance 1/d, matching a dense N(0, 1/d) map.
    lr_scale = (content_rank * d) ** -0.25
    text_map = (rng.normal(0.0, lr_scale, size=(d, content_rank))
                @ rng.normal(0.0, lr_scale, size=(content_rank, d)))
    prosody = rng.normal(0.0, 1.0, size=(n_classes, d))
    prosody /= np.linalg.norm(prosody, axis=1, keepdims=True)
    prosody *= _PROFILE_PROSODY_SCALE[profile]
    experts = []
    for k in range(n_experts):
        bias = rng.normal(0.0, 1.0, size=d)
        bias *= 0.25 / np.linalg.norm(bias)
        timbre = np.eye(d) + 0.08 * rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
        experts.append(ExpertParams(bias=bias, timbre=timbre,
                                    noise_scale=0.5 * 2.0 ** (k % 3)))
    return WorldParams(
        profile=profile, seed=seed, n_classes=n_classes, vocab_size=vocab_size,
        n_frames=n_frames, frame_dim=d, text_len_min=6, text_len_max=12,
        content_weight=_PROFILE_CONTENT_WEIGHT[profile],
        prosody_weight=_PROFILE_PROSODY_WEIGHT[profile],
        noise_sigma=noise_sigma, content_rank=content_rank,
        prosody_jitter=_PROFILE_PROSODY_JITTER[profile],
        token_embed=token_embed, text_map=text_map,
        prosody_vectors=prosody, experts=experts)


def _class_block(world: WorldParams, label: int) -> tuple[int, int]:
    width = world.vocab_size // world.n_classes
    return label * width, (label + 1) * width


def _sample_tokens(world: WorldParams, label: int, length: int,
                   rng: np.random.Generator) -> list[int]:
    lo, hi = _class_block(world, label)
    from_block = rng.random(length) < world.content_weight
    block_draws = rng.integers(lo, hi, size=length)
    background = rng.integers(0, world.vocab_size, size=length)
    return np.where(from_block, block_draws, background).tolist()


def text_frames(world: WorldParams, token_ids: list[int]) -> np.ndarray:
    """The deterministic content component of speech: token embeddings,
    time-stretched to n_frames, through the world's fixed linear map."""
    emb = world.token_embed[np.asarray(token_ids, dtype=int)]
    idx = (np.arange(world.n_frames) * len(token_ids)) // world.n_frames
    return emb[idx] @ world.text_map


def render_speech(world: WorldParams, token_ids: list[int], label: int,
                  rng: np.random.Generator) -> np.ndarray:
    """True speech for a transcript: content frames, profile-weighted class
    prosody with per-utterance jitter, and per-frame gaussian noise."""
    frames = text_frames(world, token_ids)
    prosody = world.prosody_vectors[label]
    if world.prosody_jitter > 0:
        prosody = prosody + rng.normal(0.0, world.prosody_jitter, size=prosody.shape)
    frames = frames + world.prosody_weight * prosody
    frames = frames + rng.normal(0.0, world.noise_sigma, size=frames.shape)
    return frames.astype(np.float32)


def sample_corpus(world: WorldParams, n: int, seed: int,
                  id_prefix: str = "synth", n_speakers: int = 10,
                  split: Optional[str] = None) -> Corpus:
    """Draw n utterances with labels balanced to within one sample."""
    if n < world.n_classes:
        raise ValueError(f"need at least {world.n_classes} samples, got {n}")
    rng = named_rng("corpus", world.profile, world.seed, seed, n)
    base = n // world.n_classes
    extra = rng.choice(world.n_classes, size=n % world.n_classes, replace=False)
    labels = np.repeat(np.arange(world.n_classes), base)
    labels = np.concatenate([labels, extra]).astype(int)
    rng.shuffle(labels)
    utterances = []
    for i, label in enumerate(labels):
        length = int(rng.integers(world.text_len_min, world.text_len_max + 1))
        token_ids = _sample_tokens(world, int(label), length, rng)
        speech = render_speech(world, token_ids, int(label), rng)
        utterances.append(Utterance(
            id=f"{id_prefix}-{i:05d}",
            text=" ".join(f"w{t}" for t in token_ids),
            label=int(label),
            speaker=f"spk{i % n_speakers:02d}",
            speech=speech,
            split=split,
        ))
    return Corpus(tuple(utterances), name=f"{world.profile}-{id_prefix}")


def expert_generate(world: WorldParams, expert_id: int, text: str,
                    style: Optional[int] = None, seed: int = 0) -> np.ndarray:
    """Speech generated by one expert from a transcript alone.

    Output is timbre(content frames) + bias + expert noise; the class prosody
    cue is added only when a style hint is given (mirroring the world's own
    speech composition), so an unstyled generator cannot leak label
    information that the text does not carry. Deterministic in
    (expert_id, text, style, seed).
    """
    if not 0 <= expert_id < world.n_experts:
        raise ValueError(f"unknown expert_id {expert_id} (K={world.n_experts})")
    params = world.experts[expert_id]
    token_ids = tokenize(text, world.vocab_size)
    frames = text_frames(world, token_ids) @ params.timbre + params.bias
    if style is not None:
        if not 0 <= style < world.n_classes:
            raise ValueError(f"style {style} out of range [0, {world.n_classes})")
        frames = frames + world.prosody_weight * world.prosody_vectors[style]
    rng = named_rng("expert_gen", world.profile, world.seed, expert_id, text,
                    -1 if style is None else style, seed)
    noise = rng.normal(0.0, params.noise_scale * world.noise_sigma,
                       size=frames.shape)
    return (frames + noise).astype(np.float32)


def save_world(world: WorldParams, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(world.to_dict()) + "\n", encoding="utf-8")
    return path


def load_world(path: str | Path) -> WorldParams:
    return WorldParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
