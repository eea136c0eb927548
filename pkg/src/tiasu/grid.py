"""Experiment grid: methods x p x q x folds x seeds, resumable by cell.

Each cell trains (or reuses) a model and evaluates it under a test-time
missing plan. Completed cells are identified in the append-only journal by a
hash of the grid config, the code version, and the cell coordinates, so a
rerun of a finished grid performs zero training. Non-dropout methods share
one trained model across all q values of a cell group; dropout methods train
with rate equal to q, mirroring the evaluation protocol.

Cell failures are recorded as error rows and the grid continues.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .corpus import (Corpus, PartitionedCorpus, apply_missing, apply_test_missing,
                     load_manifest, split_partition)
from .pool import GenerationPool, build_pool, impute_dataset, synthetic_experts
from .results import ResultRow, ResultTable, append_journal, load_journal
from .seeding import derive_seed
from .synth import WorldParams, make_world, sample_corpus
from .training import (DROPOUT_METHODS, METHOD_POLICY, METHODS, BatchEncoder,
                       TrainConfig, default_encoders, evaluate, score_predictions,
                       train)
from .augment import AugmentedSet, TokenResampleRephraser, build_aug_set

log = logging.getLogger(__name__)


@dataclass
class GridConfig:
    methods: list[str]
    p_values: list[float] = field(default_factory=lambda: [0.0])
    q_values: list[float] = field(default_factory=lambda: [0.0])
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    name: str = "desk"
    task: str = "synthetic"
    metric: str = "uar"
    # synthetic world (ignored when manifests are given)
    world: dict = field(default_factory=lambda: {"profile": "content_dominant", "seed": 0})
    n_train: int = 1200
    n_test: int = 400
    data_seed: int = 0
    # fixed-split manifests: {"train": path, "test": path}
    manifests: Optional[dict] = None
    expert_ids: Optional[list[int]] = None
    style_policy: str = "none"
    use_llm_aug: bool = False
    val_fraction: float = 0.2
    epochs: Optional[int] = None
    lr: Optional[float] = None
    batch_size: int = 64
    encoder_seed: int = 0

    def __post_init__(self) -> None:
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods in grid config: {unknown}")

    @classmethod
    def from_dict(cls, d: dict) -> "GridConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown grid config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "GridConfig":
        raw = Path(path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(os.path.expandvars(raw)))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def cell_hash(cfg: GridConfig, method: str, p: float, q: float, fold: int,
              seed: int) -> str:
    payload = json.dumps({
        "version": __version__,
        "config": cfg.to_dict(),
        "cell": [method, p, q, fold, seed],
    }, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class _GridData:
    """Lazily prepared corpora, pools, and trained models for one grid run."""

    def __init__(self, cfg: GridConfig):
        self.cfg = cfg
        self.world: Optional[WorldParams] = None
        if cfg.manifests is None:
            self.world = make_world(**cfg.world)
            self.train_corpus = sample_corpus(self.world, cfg.n_train, cfg.data_seed,
                                              id_prefix="train")
            self.test_corpus = sample_corpus(self.world, cfg.n_test,
                                             derive_seed("test_corpus", cfg.data_seed),
                                             id_prefix="test", split="test")
            self.enc = default_encoders(speech_input_dim=self.world.frame_dim,
                                        vocab_size=self.world.vocab_size,
                                        seed=cfg.encoder_seed)
        else:
            self.train_corpus = load_manifest(cfg.manifests["train"])
            self.test_corpus = load_manifest(cfg.manifests["test"])
            self.enc = default_encoders(seed=cfg.encoder_seed)
        self._partitions: dict = {}
        self._pools: dict = {}
        self._aug_sets: dict = {}
        self._models: dict = {}
        self.trained_cells = 0

    def experts(self):
        if self.world is None:
            raise ValueError("manifest grids need a pre-built pool; "
                             "synthetic experts require a world")
        bank = synthetic_experts(self.world)
        if self.cfg.expert_ids is not None:
            bank = [bank[i] for i in self.cfg.expert_ids]
        return bank

    def partition(self, p: float, seed: int):
        key = (p, seed)
        if key not in self._partitions:
            part = apply_missing(self.train_corpus, p, seed)
            self._partitions[key] = split_partition(part, self.cfg.val_fraction, seed)
        return self._partitions[key]

    def pool(self, p: float, seed: int) -> GenerationPool:
        key = (p, seed)
        if key not in self._pools:
            part = apply_missing(self.train_corpus, p, seed)
            self._pools[key] = build_pool(part.text_only, self.experts(),
                                          style_policy=self.cfg.style_policy,
                                          seed=seed)
        return self._pools[key]

    def aug_set(self, p: float, seed: int) -> AugmentedSet:
        key = (p, seed)
        if key not in self._aug_sets:
            if self.world is None:
                raise ValueError("LLM augmentation in manifest grids needs an adapter")
            train_part, _ = self.partition(p, seed)
            adapter = TokenResampleRephraser(self.world, seed=seed)
            self._aug_sets[key] = build_aug_set(train_part.text_only, adapter,
                                                self.experts(),
                                                style_policy=self.cfg.style_policy,
                                                seed=seed)
        return self._aug_sets[key]

    def model_for(self, method: str, p: float, fold: int, seed: int, rate: float):
        key = (method, p, fold, seed, rate)
        if key not in self._models:
            cfg = self.cfg
            policy = METHOD_POLICY[method]
            train_part, val_part = self.partition(p, seed)
            pool = self.pool(p, seed) if policy == "tts" else None
            view = impute_dataset(train_part, pool, policy)
            val_view = impute_dataset(val_part, pool, policy)
            aug = self.aug_set(p, seed) if cfg.use_llm_aug else None
            config = TrainConfig(method=method, seed=seed, p=p,
                                 dropout_rate=rate, metric=cfg.metric,
                                 batch_size=cfg.batch_size,
                                 lr=cfg.lr, max_epochs=cfg.epochs,
                                 use_llm_aug=cfg.use_llm_aug)
            result = train(view, val_view, config, self.enc, aug_set=aug)
            self._models[key] = (result, view.nominal_frames, view.dim)
            self.trained_cells += 1
        return self._models[key]


def _cell_metrics(cfg: GridConfig) -> list[str]:
    names = [cfg.metric, "accuracy"]
    if cfg.metric == "f1_macro":
        names.insert(1, "f1_micro")
    seen: list[str] = []
    for n in names:
        if n not in seen:
            seen.append(n)
    return seen


def run_grid(cfg: GridConfig, out_dir: str | Path) -> tuple[ResultTable, dict]:
    """Execute every grid cell, skipping those already journaled.

    Returns the aggregated table and run statistics
    {"trained", "skipped", "failed", "completed"}.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "grid_config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    journal_path = out_dir / "results.jsonl"
    table = load_journal(journal_path)
    data = _GridData(cfg)
    metrics = _cell_metrics(cfg)
    stats = {"trained": 0, "skipped": 0, "failed": 0, "completed": 0}
    folds = [0]
    for method in cfg.methods:
        for p in cfg.p_values:
            for q in cfg.q_values:
                for fold in folds:
                    for seed in cfg.seeds:
                        chash = cell_hash(cfg, method, p, q, fold, seed)
                        done = [r for r in table.raw_rows(
                            dataset=cfg.name, method=method, p=p, q=q,
                            fold=fold, seed=seed) if r.cell_hash == chash]
                        if done:
                            stats["skipped"] += 1
                            continue
                        rate = q if method in DROPOUT_METHODS else 0.0
                        try:
                            result, nominal, dim = data.model_for(
                                method, p, fold, seed, rate)
                            plan = apply_test_missing(data.test_corpus, q, seed)
                            preds = evaluate(result.model, data.test_corpus, plan,
                                             data.enc, nominal_frames=nominal,
                                             dim=dim, batch_size=cfg.batch_size)
                            rows = [ResultRow(
                                dataset=cfg.name, task=cfg.task, method=method,
                                p=p, q=q, fold=fold, seed=seed, metric=m,
                                value=score_predictions(preds, m),
                                cell_hash=chash) for m in metrics]
                        except Exception as exc:  # cell failures never kill the grid
                            log.exception("grid cell failed: %s p=%s q=%s seed=%s",
                                          method, p, q, seed)
                            rows = [ResultRow(
                                dataset=cfg.name, task=cfg.task, method=method,
                                p=p, q=q, fold=fold, seed=seed,
                                metric=cfg.metric, value=float("nan"),
                                cell_hash=chash, error=f"{type(exc).__name__}: {exc}")]
                            stats["failed"] += 1
                        for row in rows:
                            table.add(row)
                        append_journal(journal_path, rows)
                        stats["completed"] += 1
    stats["trained"] = data.trained_cells
    return table.aggregate(), stats
