"""Result rows, aggregation, and the append-only results journal.

Raw rows are keyed by (dataset, task, method, p, q, fold, seed, metric).
Aggregation averages over folds within each seed first, then over seeds,
and emits rows flagged kind="agg" carrying the seed-spread as well.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

RowKey = tuple


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    task: str
    method: str
    p: float
    q: float
    fold: int
    seed: int
    metric: str
    value: float
    kind: str = "raw"            # raw | agg
    cell_hash: str = ""
    error: Optional[str] = None

    @property
    def key(self) -> RowKey:
        return (self.dataset, self.task, self.method, self.p, self.q,
                self.fold, self.seed, self.metric, self.kind)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRow":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class ResultTable:
    """Unique-keyed rows plus seed/fold aggregation."""

    def __init__(self) -> None:
        self._rows: dict[RowKey, ResultRow] = {}

    def __len__(self) -> int:
        return len(self._rows)

    def __iter__(self):
        return iter(self._rows.values())

    def add(self, row: ResultRow) -> None:
        if row.key in self._rows:
            raise ValueError(f"duplicate result row for key {row.key}")
        self._rows[row.key] = row

    def has(self, key: RowKey) -> bool:
        return key in self._rows

    def rows(self, **filters) -> list[ResultRow]:
        out = []
        for row in self._rows.values():
            if all(getattr(row, k) == v for k, v in filters.items()):
                out.append(row)
        return out

    def raw_rows(self, **filters) -> list[ResultRow]:
        return self.rows(kind="raw", **filters)

    def value(self, **filters) -> float:
        matches = self.rows(**filters)
        if len(matches) != 1:
            raise KeyError(f"expected exactly one row for {filters}, found {len(matches)}")
        return matches[0].value

    def aggregate(self) -> "ResultTable":
        """Mean over folds within each seed, then mean over seeds.

        Aggregated rows use fold=-1, seed=-1 and kind="agg"; a companion
        metric "<name>__seed_std" records the spread of the per-seed means.
        """
        grouped: dict[tuple, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
        for row in self._rows.values():
            if row.kind != "raw" or row.error is not None:
                continue
            group = (row.dataset, row.task, row.method, row.p, row.q, row.metric)
            grouped[group][row.seed].append(row.value)
        out = ResultTable()
        for row in self._rows.values():
            out._rows[row.key] = row
        for (dataset, task, method, p, q, metric), per_seed in grouped.items():
            seed_means = [float(np.mean(vals)) for _, vals in sorted(per_seed.items())]
            mean = float(np.mean(seed_means))
            std = float(np.std(seed_means))
            out.add(ResultRow(dataset=dataset, task=task, method=method, p=p, q=q,
                              fold=-1, seed=-1, metric=metric, value=mean, kind="agg"))
            out.add(ResultRow(dataset=dataset, task=task, method=method, p=p, q=q,
                              fold=-1, seed=-1, metric=f"{metric}__seed_std",
                              value=std, kind="agg"))
        return out


# ---------------------------------------------------------------------------
# Journal
# ---------------------------------------------------------------------------

def append_journal(path: str | Path, rows: Iterable[ResultRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_dict()) + "\n")


def load_journal(path: str | Path) -> ResultTable:
    table = ResultTable()
    path = Path(path)
    if not path.exists():
        return table
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = ResultRow.from_dict(json.loads(line))
            if not table.has(row.key):
                table.add(row)
    return table
