"""Training loops for every comparison method, plus evaluation.

Methods and what they train on:

    text           text model on every transcript (text is never missing)
    speech         speech model on the modality-complete subset only
    mm             multimodal model on the modality-complete subset only
    mm_zero        multimodal model, missing speech filled with zeros
    tiasu_s        speech model on the imputed dataset (real + generated)
    tiasu_mm       multimodal model on the imputed dataset
    mm_dropout     mm plus per-batch speech dropout
    tiasu_dropout  tiasu_mm plus per-batch speech dropout (zeroing lands on
                   real and generated speech alike)

Imputed candidates are re-drawn every epoch; the epoch index salts the RNG
stream. With LLM augmentation on, each imputed utterance draws its
(text, speech) pair uniformly over all of its original and augmented
candidates. Batch shuffling, dropout masks, and candidate selection each use
their own named stream, so the boundary equivalences hold exactly:
tiasu_mm(p=0) == mm_zero(p=0) == mm, and mm_dropout(rate=0) == mm.

At evaluation time masked test utterances get zero-filled speech; generated
speech is never used on the test set.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .augment import AugmentedSet
from .corpus import Corpus, TestMissingPlan, Utterance
from .encoders import SpeechLayerStack, TextHidden, ToySpeechEncoder, ToyTextEncoder
from .metrics import metric_fn
from .model import AsuClassifier, ModelSpec, save_checkpoint
from .pool import DatasetView, zero_fill
from .seeding import derive_seed, named_rng

log = logging.getLogger(__name__)

METHODS = ("text", "speech", "mm", "mm_zero", "tiasu_s", "tiasu_mm",
           "mm_dropout", "tiasu_dropout")
METHOD_MODE = {
    "text": "text", "speech": "speech", "mm": "mm", "mm_zero": "mm",
    "tiasu_s": "speech", "tiasu_mm": "mm", "mm_dropout": "mm",
    "tiasu_dropout": "mm",
}
METHOD_POLICY = {
    "text": "zero", "speech": "drop", "mm": "drop", "mm_zero": "zero",
    "tiasu_s": "tts", "tiasu_mm": "tts", "mm_dropout": "drop",
    "tiasu_dropout": "tts",
}
DROPOUT_METHODS = frozenset({"mm_dropout", "tiasu_dropout"})
SPEECH_MODE_METHODS = frozenset({"speech", "tiasu_s"})

SPEECH_LR, SPEECH_EPOCHS = 5e-4, 30
TEXT_MM_LR, TEXT_MM_EPOCHS = 1e-4, 20


class TrainingDiverged(RuntimeError):
    """Loss became NaN/Inf; aborted with a diagnostic."""


@dataclass
class TrainConfig:
    method: str
    batch_size: int = 64
    lr: Optional[float] = None
    max_epochs: Optional[int] = None
    dropout_rate: float = 0.0
    seed: int = 0
    p: float = 0.0
    use_llm_aug: bool = False
    metric: str = "uar"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1], got {self.dropout_rate}")
        if self.lr is None:
            self.lr = SPEECH_LR if self.method in SPEECH_MODE_METHODS else TEXT_MM_LR
        if self.max_epochs is None:
            self.max_epochs = (SPEECH_EPOCHS if self.method in SPEECH_MODE_METHODS
                               else TEXT_MM_EPOCHS)

    @property
    def mode(self) -> str:
        return METHOD_MODE[self.method]

    @property
    def policy(self) -> str:
        return METHOD_POLICY[self.method]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainExample:
    uid: str
    text: str
    speech: Optional[np.ndarray]
    label: int
    provenance: str
    origin: str  # cache key hint: "real" | "zero" | "dropout" | "expert:..." | "aug:expert:..."


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_metric": self.val_metric,
                "best_epoch": self.best_epoch}


@dataclass
class Prediction:
    uid: str
    label: int
    pred: int
    q_masked: bool


# ---------------------------------------------------------------------------
# Per-epoch materialization
# ---------------------------------------------------------------------------

def epoch_materialize(view: DatasetView, epoch: int | str, seed: int,
                      aug_set: Optional[AugmentedSet] = None) -> list[TrainExample]:
    """Resolve the training pairs for one epoch.

    Complete utterances pass through with their real speech. Text-only
    utterances are resolved per policy; under ``tts`` each one draws a fresh
    candidate this epoch, uniformly over its original candidates plus (if an
    augmented set is supplied) its augmented-text candidates. Coverage gaps
    fall back to zero-fill.
    """
    examples = [TrainExample(u.id, u.text, _payload(u), u.label, u.provenance, "real")
                for u in view.partition.complete]
    if view.policy == "drop":
        return examples
    for u in view.partition.text_only:
        if view.policy == "zero":
            filled = zero_fill(u, view.nominal_frames, view.dim)
            examples.append(TrainExample(u.id, u.text, filled.speech, u.label,
                                         "zero_filled", "zero"))
            continue
        options: list[tuple[str, object, str]] = []
        candidates = view.pool.entries.get(u.id, []) if view.pool else []
        options.extend((u.text, c, "") for c in candidates)
        if aug_set is not None:
            entry = aug_set.entries.get(u.id)
            if entry is not None:
                options.extend((entry.text_aug, c, "aug:") for c in entry.candidates)
        if not options:
            filled = zero_fill(u, view.nominal_frames, view.dim)
            examples.append(TrainExample(u.id, u.text, filled.speech, u.label,
                                         "zero_filled", "zero"))
            continue
        rng = named_rng("materialize", seed, epoch, u.id)
        text, cand, prefix = options[int(rng.integers(len(options)))]
        examples.append(TrainExample(u.id, text, cand.payload, u.label,
                                     "generated", prefix + cand.origin))
    return examples


def _payload(u: Utterance) -> Optional[np.ndarray]:
    return u.speech if isinstance(u.speech, np.ndarray) else None


def dropout_batch(batch: Sequence[TrainExample], rate: float,
                  rng: np.random.Generator) -> list[TrainExample]:
    """Independently replace each sample's speech with zeros with probability
    ``rate``. Text is untouched."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    draws = rng.random(len(batch))
    out = []
    for ex, draw in zip(batch, draws):
        if draw < rate and ex.speech is not None:
            out.append(dataclasses.replace(
                ex, speech=np.zeros_like(ex.speech), provenance="zero_filled",
                origin="dropout"))
        else:
            out.append(ex)
    return out


# ---------------------------------------------------------------------------
# Encoding batches into model tensors
# ---------------------------------------------------------------------------

class BatchEncoder:
    """Encodes examples with frozen encoders and pads them into tensors.

    Encoded features are cached: real speech by utterance id, generated
    candidates by their origin tag, zero payloads by shape (the encoders are
    pure, so every all-zero payload of one shape encodes identically).
    """

    def __init__(self, speech_encoder: Optional[ToySpeechEncoder] = None,
                 text_encoder: Optional[ToyTextEncoder] = None,
                 cache: bool = True):
        self.speech_encoder = speech_encoder
        self.text_encoder = text_encoder
        self._cache_enabled = cache
        self._speech_cache: dict[object, SpeechLayerStack] = {}
        self._text_cache: dict[str, TextHidden] = {}

    def _speech_key(self, ex: TrainExample) -> object:
        if ex.origin in ("zero", "dropout"):
            return ("zero",) + tuple(ex.speech.shape)
        if ex.origin == "real":
            return ("real", ex.uid)
        return (ex.uid, ex.origin)

    def speech_stack(self, ex: TrainExample) -> SpeechLayerStack:
        if hasattr(self.speech_encoder, "encode_id"):
            return self.speech_encoder.encode_id(ex.uid)
        key = self._speech_key(ex)
        if self._cache_enabled and key in self._speech_cache:
            return self._speech_cache[key]
        stack = self.speech_encoder.encode(ex.speech)
        if self._cache_enabled:
            self._speech_cache[key] = stack
        return stack

    def text_hidden(self, ex: TrainExample) -> TextHidden:
        if hasattr(self.text_encoder, "encode_id"):
            return self.text_encoder.encode_id(ex.uid)
        if self._cache_enabled and ex.text in self._text_cache:
            return self._text_cache[ex.text]
        hidden = self.text_encoder.encode(ex.text)
        if self._cache_enabled:
            self._text_cache[ex.text] = hidden
        return hidden

    def encode_batch(self, batch: Sequence[TrainExample], mode: str) -> dict:
        tensors: dict[str, Optional[torch.Tensor]] = {
            "speech_stack": None, "speech_mask": None,
            "text_hidden": None, "text_mask": None,
        }
        if mode in ("speech", "mm"):
            stacks = [self.speech_stack(ex) for ex in batch]
            t_max = max(s.n_frames for s in stacks)
            n_layers, dim = stacks[0].hidden.shape[0], stacks[0].dim
            arr = np.zeros((len(batch), n_layers, t_max, dim), dtype=np.float32)
            mask = np.zeros((len(batch), t_max), dtype=bool)
            for i, s in enumerate(stacks):
                arr[i, :, :s.n_frames] = s.hidden
                mask[i, :s.n_frames] = True
            tensors["speech_stack"] = torch.from_numpy(arr)
            tensors["speech_mask"] = torch.from_numpy(mask)
        if mode in ("text", "mm"):
            hiddens = [self.text_hidden(ex) for ex in batch]
            t_max = max(h.n_tokens for h in hiddens)
            dim = hiddens[0].dim
            arr = np.zeros((len(batch), t_max, dim), dtype=np.float32)
            mask = np.zeros((len(batch), t_max), dtype=bool)
            for i, h in enumerate(hiddens):
                arr[i, :h.n_tokens] = h.hidden
                mask[i, :h.n_tokens] = h.mask
            tensors["text_hidden"] = torch.from_numpy(arr)
            tensors["text_mask"] = torch.from_numpy(mask)
        return tensors


def default_encoders(speech_input_dim: int = 16, vocab_size: int = 64,
                     seed: int = 0) -> BatchEncoder:
    return BatchEncoder(
        speech_encoder=ToySpeechEncoder(input_dim=speech_input_dim, seed=seed),
        text_encoder=ToyTextEncoder(vocab_size=vocab_size, seed=seed))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: AsuClassifier
    spec: ModelSpec
    config: TrainConfig
    history: TrainHistory


def _infer_n_classes(view: DatasetView, val_view: Optional[DatasetView]) -> int:
    labels = [u.label for u in view.partition.complete]
    labels += [u.label for u in view.partition.text_only]
    if val_view is not None:
        labels += [u.label for u in val_view.partition.complete]
        labels += [u.label for u in val_view.partition.text_only]
    return max(labels) + 1


def make_spec(config: TrainConfig, enc: BatchEncoder, n_classes: int) -> ModelSpec:
    kwargs: dict = {"mode": config.mode, "n_classes": n_classes}
    if enc.speech_encoder is not None and hasattr(enc.speech_encoder, "n_layers"):
        kwargs["n_speech_layers"] = enc.speech_encoder.n_layers
        kwargs["speech_dim"] = enc.speech_encoder.dim
    if enc.text_encoder is not None and hasattr(enc.text_encoder, "dim"):
        kwargs["text_dim"] = enc.text_encoder.dim
    return ModelSpec(**kwargs)


def _predict(model: AsuClassifier, examples: Sequence[TrainExample],
             enc: BatchEncoder, mode: str, batch_size: int) -> np.ndarray:
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            batch = examples[start:start + batch_size]
            tensors = enc.encode_batch(batch, mode)
            logits = model(**tensors)
            preds.append(logits.argmax(dim=1).numpy())
    return np.concatenate(preds)


def train(view: DatasetView, val_view: Optional[DatasetView], config: TrainConfig,
          enc: BatchEncoder, aug_set: Optional[AugmentedSet] = None,
          spec: Optional[ModelSpec] = None) -> TrainResult:
    """Cross-entropy training with per-epoch validation.

    Returns the checkpoint from the epoch with the best validation metric
    (first epoch on ties; last epoch if there is no validation data).
    Validation pairs are materialized once, outside the per-epoch stream, so
    the selection signal is comparable across epochs.
    """
    if view.n_examples == 0:
        raise ValueError(f"method {config.method!r} has no training data "
                         f"(policy {view.policy!r}, p={config.p})")
    if spec is None:
        spec = make_spec(config, enc, _infer_n_classes(view, val_view))
    torch.manual_seed(derive_seed("torch_backend", config.seed))
    model = AsuClassifier(spec, seed=derive_seed("model", config.seed))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    loss_fn = nn.CrossEntropyLoss()

    val_examples: list[TrainExample] = []
    if val_view is not None:
        val_examples = epoch_materialize(val_view, "val", config.seed)
    val_labels = np.array([ex.label for ex in val_examples], dtype=int)
    score = metric_fn(config.metric)

    history = TrainHistory()
    best_metric = -math.inf
    best_state: Optional[dict] = None
    for epoch in range(config.max_epochs):
        examples = epoch_materialize(
            view, epoch, config.seed,
            aug_set=aug_set if config.use_llm_aug else None)
        order = named_rng("shuffle", config.seed, epoch).permutation(len(examples))
        model.train()
        total_loss, n_batches = 0.0, 0
        for bi, start in enumerate(range(0, len(examples), config.batch_size)):
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            if config.method in DROPOUT_METHODS:
                batch = dropout_batch(batch, config.dropout_rate,
                                      named_rng("dropout", config.seed, epoch, bi))
            tensors = enc.encode_batch(batch, config.mode)
            labels = torch.tensor([ex.label for ex in batch], dtype=torch.long)
            logits = model(**tensors)
            loss = loss_fn(logits, labels)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {bi} "
                    f"(method={config.method}, lr={config.lr}, seed={config.seed})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach())
            n_batches += 1
        history.train_loss.append(total_loss / max(n_batches, 1))
        if val_examples:
            preds = _predict(model, val_examples, enc, config.mode, config.batch_size)
            val_metric = score(val_labels, preds)
        else:
            val_metric = float("nan")
        history.val_metric.append(val_metric)
        if val_examples and val_metric > best_metric:
            best_metric = val_metric
            best_state = copy.deepcopy(model.state_dict())
            history.best_epoch = epoch
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        history.best_epoch = config.max_epochs - 1
    model.eval()
    return TrainResult(model=model, spec=spec, config=config, history=history)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(model: AsuClassifier, test: Corpus,
             plan: Optional[TestMissingPlan], enc: BatchEncoder,
             nominal_frames: int = 32, dim: int = 16,
             batch_size: int = 64) -> list[Prediction]:
    """Predict the test set under a test-time missing plan.

    Masked utterances (and any that never had speech) are evaluated with
    zero-filled speech; everything else uses its real speech. Generated
    speech is never attached here.
    """
    examples = []
    masked_flags = []
    for u in test:
        masked = plan.is_masked(u.id) if plan is not None else False
        payload = _payload(u)
        if masked or payload is None:
            examples.append(TrainExample(
                u.id, u.text, np.zeros((nominal_frames, dim), dtype=np.float32),
                u.label, "zero_filled", "zero"))
            masked_flags.append(masked)
        else:
            examples.append(TrainExample(u.id, u.text, payload, u.label,
                                         u.provenance, "real"))
            masked_flags.append(False)
    preds = _predict(model, examples, enc, model.spec.mode, batch_size)
    return [Prediction(uid=ex.uid, label=ex.label, pred=int(pr), q_masked=mk)
            for ex, pr, mk in zip(examples, preds, masked_flags)]


def score_predictions(predictions: Sequence[Prediction], metric: str) -> float:
    labels = [p.label for p in predictions]
    preds = [p.pred for p in predictions]
    return metric_fn(metric)(labels, preds)


def predictions_to_csv(predictions: Sequence[Prediction], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "pred", "q_masked"])
        for p in predictions:
            writer.writerow([p.uid, p.label, p.pred, str(p.q_masked).lower()])
    return path


def write_run_dir(out_dir: str | Path, result: TrainResult,
                  predictions: Sequence[Prediction],
                  fingerprint: str = "") -> Path:
    """Persist one training run: config snapshot, history, checkpoint, preds."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(result.config.to_dict(), indent=2) + "\n", encoding="utf-8")
    (out_dir / "history.json").write_text(
        json.dumps(result.history.to_dict(), indent=2) + "\n", encoding="utf-8")
    save_checkpoint(result.model, out_dir / "checkpoint.pt", fingerprint=fingerprint,
                    extra={"method": result.config.method})
    predictions_to_csv(predictions, out_dir / "predictions.csv")
    return out_dir
