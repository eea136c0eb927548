"""Speech and text encoders behind one contract.

The downstream model consumes a `SpeechLayerStack` (embedding output plus L
encoder layers) and a `TextHidden` (last hidden states plus mask), regardless
of where they came from. Two in-process toy encoders make desk-scale runs
cheap and deterministic; fixture-backed encoders replay recorded features for
full-scale harness tests without downloading pretrained weights. Full-scale
adapters (e.g. a 12-layer self-supervised speech encoder) plug in through
`register_speech_encoder` / `register_text_encoder` and must honor the same
shape and finiteness contract.

All encoders here are frozen: encoding is a pure function of the input, and
no gradient ever flows into them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .seeding import named_rng
from .tokens import tokenize


class EncodingError(ValueError):
    """Invalid encoder input (wrong shape, NaN payload, empty text)."""


@dataclass
class SpeechLayerStack:
    """(L+1, T, D) hidden states: embedding output plus L encoder layers."""

    hidden: np.ndarray
    frame_rate: float = 50.0

    @property
    def n_layers(self) -> int:
        return self.hidden.shape[0] - 1

    @property
    def n_frames(self) -> int:
        return self.hidden.shape[1]

    @property
    def dim(self) -> int:
        return self.hidden.shape[2]


@dataclass
class TextHidden:
    """(T_text, D_text) last hidden states with a validity mask."""

    hidden: np.ndarray
    mask: np.ndarray

    @property
    def n_tokens(self) -> int:
        return self.hidden.shape[0]

    @property
    def dim(self) -> int:
        return self.hidden.shape[1]


class ToySpeechEncoder:
    """Fixed random projection followed by L frozen tanh mixing layers.

    Small enough for finite-difference checks downstream, but shaped exactly
    like a full-scale layered encoder: the output stack has L+1 rows.
    """

    def __init__(self, input_dim: int = 16, dim: int = 16, n_layers: int = 4,
                 seed: int = 0):
        self.input_dim = input_dim
        self.dim = dim
        self.n_layers = n_layers
        self.seed = seed
        rng = named_rng("speech_encoder", seed, input_dim, dim, n_layers)
        scale = 1.0 / np.sqrt(input_dim)
        self._w_in = rng.normal(0.0, scale, size=(input_dim, dim)).astype(np.float32)
        self._b_in = rng.normal(0.0, 0.1, size=dim).astype(np.float32)
        self._layers = []
        for _ in range(n_layers):
            w = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim)).astype(np.float32)
            b = rng.normal(0.0, 0.1, size=dim).astype(np.float32)
            self._layers.append((w, b))

    def encode(self, payload: np.ndarray) -> SpeechLayerStack:
        payload = np.asarray(payload, dtype=np.float32)
        if payload.ndim != 2:
            raise EncodingError(f"speech payload must be 2-D (T, D), got {payload.shape}")
        if payload.shape[1] != self.input_dim:
            raise EncodingError(
                f"payload dim {payload.shape[1]} != encoder input dim {self.input_dim}")
        if not np.isfinite(payload).all():
            raise EncodingError("speech payload contains NaN or Inf")
        h = payload @ self._w_in + self._b_in
        stack = [h]
        for w, b in self._layers:
            h = np.tanh(h @ w + b)
            stack.append(h)
        return SpeechLayerStack(hidden=np.stack(stack).astype(np.float32))


class ToyTextEncoder:
    """Seeded token-embedding lookup plus one frozen tanh mixing layer."""

    def __init__(self, vocab_size: int = 64, dim: int = 16, seed: int = 0):
        self.vocab_size = vocab_size
        self.dim = dim
        self.seed = seed
        rng = named_rng("text_encoder", seed, vocab_size, dim)
        self._embed = rng.normal(0.0, 1.0, size=(vocab_size, dim)).astype(np.float32)
        self._w = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim)).astype(np.float32)
        self._b = rng.normal(0.0, 0.1, size=dim).astype(np.float32)

    def encode(self, text: str) -> TextHidden:
        token_ids = tokenize(text, self.vocab_size)
        return self.encode_tokens(token_ids)

    def encode_tokens(self, token_ids: list[int]) -> TextHidden:
        if not token_ids:
            raise EncodingError("cannot encode an empty token sequence")
        emb = self._embed[np.asarray(token_ids, dtype=int)]
        hidden = np.tanh(emb @ self._w + self._b)
        mask = np.ones(len(token_ids), dtype=bool)
        return TextHidden(hidden=hidden.astype(np.float32), mask=mask)


class FixtureSpeechEncoder:
    """Replays recorded speech feature stacks keyed by utterance id.

    Stands in for an expensive pretrained encoder: features are computed once
    elsewhere, stored as ``<id>.npy`` under ``root``, and served verbatim.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise EncodingError(f"fixture directory not found: {self.root}")

    def encode_id(self, uid: str) -> SpeechLayerStack:
        path = self.root / f"{uid}.npy"
        if not path.exists():
            raise EncodingError(f"no recorded features for utterance {uid!r}")
        hidden = np.load(path).astype(np.float32)
        if hidden.ndim != 3:
            raise EncodingError(f"recorded stack for {uid!r} must be 3-D, got {hidden.shape}")
        if not np.isfinite(hidden).all():
            raise EncodingError(f"recorded stack for {uid!r} contains NaN or Inf")
        return SpeechLayerStack(hidden=hidden)

    @staticmethod
    def record(root: str | Path, uid: str, stack: SpeechLayerStack) -> Path:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        path = root / f"{uid}.npy"
        np.save(path, stack.hidden.astype(np.float32))
        return path


class FixtureTextEncoder:
    """Replays recorded text hidden states keyed by utterance id."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise EncodingError(f"fixture directory not found: {self.root}")

    def encode_id(self, uid: str) -> TextHidden:
        path = self.root / f"{uid}.npz"
        if not path.exists():
            raise EncodingError(f"no recorded text features for utterance {uid!r}")
        data = np.load(path)
        return TextHidden(hidden=data["hidden"].astype(np.float32),
                          mask=data["mask"].astype(bool))

    @staticmethod
    def record(root: str | Path, uid: str, hidden: TextHidden) -> Path:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        path = root / f"{uid}.npz"
        np.savez(path, hidden=hidden.hidden.astype(np.float32), mask=hidden.mask)
        return path


# ---------------------------------------------------------------------------
# Registry: encoders are looked up by name so run configs stay declarative.
# ---------------------------------------------------------------------------

_SPEECH_REGISTRY: dict[str, Callable[..., object]] = {}
_TEXT_REGISTRY: dict[str, Callable[..., object]] = {}


def register_speech_encoder(name: str, factory: Callable[..., object]) -> None:
    _SPEECH_REGISTRY[name] = factory


def register_text_encoder(name: str, factory: Callable[..., object]) -> None:
    _TEXT_REGISTRY[name] = factory


register_speech_encoder("toy", ToySpeechEncoder)
register_text_encoder("toy", ToyTextEncoder)


def get_speech_encoder(name: str, **kwargs):
    """'toy', 'fixture:<dir>', or any registered full-scale adapter name."""
    if name.startswith("fixture:"):
        return FixtureSpeechEncoder(name.split(":", 1)[1])
    if name in _SPEECH_REGISTRY:
        return _SPEECH_REGISTRY[name](**kwargs)
    raise KeyError(f"unknown speech encoder {name!r}; "
                   f"registered: {sorted(_SPEECH_REGISTRY)} or 'fixture:<dir>'")


def get_text_encoder(name: str, **kwargs):
    if name.startswith("fixture:"):
        return FixtureTextEncoder(name.split(":", 1)[1])
    if name in _TEXT_REGISTRY:
        return _TEXT_REGISTRY[name](**kwargs)
    raise KeyError(f"unknown text encoder {name!r}; "
                   f"registered: {sorted(_TEXT_REGISTRY)} or 'fixture:<dir>'")
