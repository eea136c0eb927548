"""Downstream classifier: layer-weighted speech head, GRU text head, fusion.

Speech path: a softmax-weighted sum over all encoder layers feeds two
pointwise (kernel width 1) 1-D convolutions with 256 channels, ReLU between
them, then masked global average pooling over time, giving a 256-d embedding.

Text path: a 2-layer bidirectional GRU with 128 hidden units per direction
(256 per frame after concatenation) runs over the text hidden states; the
masked temporal mean gives a 256-d embedding.

Fusion: in multimodal mode the two embeddings are concatenated (512) and fed
through FC(256) -> ReLU -> FC(C). Single-modality modes feed their one 256-d
embedding through the same classifier shape without fusion.

Parameters are initialized from named numpy streams (layer weights at zero,
i.e. uniform attention; matrices Xavier-uniform; biases zero), which keeps
construction bit-identical across processes and torch versions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .seeding import named_rng

MODES = ("speech", "text", "mm")


class ModelInputError(ValueError):
    """Forward called without the embeddings its mode requires."""


@dataclass
class ModelSpec:
    mode: str
    n_classes: int
    n_speech_layers: int = 4      # L; the layer stack carries L+1 rows
    speech_dim: int = 16
    text_dim: int = 16
    conv_channels: int = 256
    gru_layers: int = 2
    gru_hidden: int = 128         # per direction
    fc_hidden: int = 256

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")

    @property
    def uses_speech(self) -> bool:
        return self.mode in ("speech", "mm")

    @property
    def uses_text(self) -> bool:
        return self.mode in ("text", "mm")

    @property
    def embedding_dim(self) -> int:
        return 2 * self.conv_channels if self.mode == "mm" else self.conv_channels


def count_parameters(spec: ModelSpec) -> int:
    """Closed-form parameter count of the downstream heads.

    speech head: (L+1) layer weights
                 + conv1: D*ch + ch, conv2: ch*ch + ch
    text head:   GRU, per layer and direction: 3H*(in + H) + 6H,
                 where in = D_text on layer 0 and 2H above
    classifier:  in_f*fc + fc + fc*C + C, in_f = 2*ch (mm) or ch
    """
    total = 0
    ch = spec.conv_channels
    if spec.uses_speech:
        total += spec.n_speech_layers + 1
        total += spec.speech_dim * ch + ch
        total += ch * ch + ch
    if spec.uses_text:
        h = spec.gru_hidden
        for layer in range(spec.gru_layers):
            d_in = spec.text_dim if layer == 0 else 2 * h
            total += 2 * (3 * h * (d_in + h) + 6 * h)
    in_f = spec.embedding_dim
    total += in_f * spec.fc_hidden + spec.fc_hidden
    total += spec.fc_hidden * spec.n_classes + spec.n_classes
    return total


def _xavier(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in = shape[1] * receptive
    fan_out = shape[0] * receptive
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-bound, bound, size=shape)


def masked_time_mean(x: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
    """Mean of (B, T, D) over T, counting only positions where mask is true."""
    if mask is None:
        return x.mean(dim=1)
    m = mask.to(x.dtype).unsqueeze(-1)
    denom = m.sum(dim=1).clamp_min(1.0)
    return (x * m).sum(dim=1) / denom


class AsuClassifier(nn.Module):
    """The downstream model; see module docstring for the architecture."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.seed = seed
        if spec.uses_speech:
            self.layer_logits = nn.Parameter(torch.zeros(spec.n_speech_layers + 1))
            self.conv1 = nn.Conv1d(spec.speech_dim, spec.conv_channels, kernel_size=1)
            self.conv2 = nn.Conv1d(spec.conv_channels, spec.conv_channels, kernel_size=1)
        if spec.uses_text:
            self.gru = nn.GRU(spec.text_dim, spec.gru_hidden,
                              num_layers=spec.gru_layers, bidirectional=True,
                              batch_first=True)
        self.fc1 = nn.Linear(spec.embedding_dim, spec.fc_hidden)
        self.fc2 = nn.Linear(spec.fc_hidden, spec.n_classes)
        self._init_parameters(seed)

    def _init_parameters(self, seed: int) -> None:
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name == "layer_logits" or "bias" in name:
                    p.zero_()
                    continue
                rng = named_rng("model_init", seed, name)
                p.copy_(torch.from_numpy(_xavier(tuple(p.shape), rng)).to(p.dtype))

    # -- speech path --------------------------------------------------------

    def combine_layers(self, stack: torch.Tensor) -> torch.Tensor:
        """Softmax-weighted sum over the layer axis: (B, L+1, T, D) -> (B, T, D)."""
        if stack.shape[1] != self.layer_logits.shape[0]:
            raise ModelInputError(
                f"stack has {stack.shape[1]} layers, expected {self.layer_logits.shape[0]}")
        weights = torch.softmax(self.layer_logits, dim=0)
        return torch.einsum("l,bltd->btd", weights.to(stack.dtype), stack)

    def speech_embedding(self, stack: torch.Tensor,
                         mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        frames = self.combine_layers(stack)
        h = frames.transpose(1, 2)              # (B, D, T)
        h = torch.relu(self.conv1(h))
        h = self.conv2(h)
        return masked_time_mean(h.transpose(1, 2), mask)

    # -- text path -----------------------------------------------------------

    def text_embedding(self, hidden: torch.Tensor,
                       mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        if mask is None:
            out, _ = self.gru(hidden)
            return out.mean(dim=1)
        lengths = mask.sum(dim=1).to(torch.int64).cpu()
        packed = nn.utils.rnn.pack_padded_sequence(
            hidden, lengths, batch_first=True, enforce_sorted=False)
        out, _ = self.gru(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(
            out, batch_first=True, total_length=hidden.shape[1])
        return masked_time_mean(out, mask)

    # -- fusion + classification ---------------------------------------------

    def classify(self, embedding: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(embedding)))

    def forward(self, speech_stack: Optional[torch.Tensor] = None,
                speech_mask: Optional[torch.Tensor] = None,
                text_hidden: Optional[torch.Tensor] = None,
                text_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        parts = []
        if self.spec.uses_speech:
            if speech_stack is None:
                raise ModelInputError(f"mode {self.spec.mode!r} requires speech input")
            parts.append(self.speech_embedding(speech_stack, speech_mask))
        if self.spec.uses_text:
            if text_hidden is None:
                raise ModelInputError(f"mode {self.spec.mode!r} requires text input")
            parts.append(self.text_embedding(text_hidden, text_mask))
        embedding = torch.cat(parts, dim=1) if len(parts) > 1 else parts[0]
        return self.classify(embedding)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(model: AsuClassifier, path: str | Path,
                    fingerprint: str = "", extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "state": model.state_dict(),
        "fingerprint": fingerprint,
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[AsuClassifier, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {payload.get('format_version')}")
    spec = ModelSpec(**payload["spec"])
    model = AsuClassifier(spec)
    model.load_state_dict(payload["state"])
    model.eval()
    meta = {"fingerprint": payload.get("fingerprint", ""),
            "extra": payload.get("extra", {})}
    return model, meta
