"""Datasets, scaling records and selection results, plus CSV/JSON I/O."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError

SCALING_KINDS = ("none", "range_pm1", "zscore")
GROUP_COLUMN = "group"


def _frozen(a, ndim=None):
    a = np.array(a, dtype=np.float64, copy=True)
    if ndim == 2 and a.ndim == 1:
        a = a[:, None]
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScalingRecord:
    """Per-column affine map ``scaled = (raw - offset) / scale``.

    ``offset`` and ``scale`` have shape ``(n_groups, n_columns)``; row ``g``
    applies to rows of the dataset whose group label is ``groups[g]``.
    ``flagged`` lists columns whose range or deviation was zero in some group.
    """

    kind: str
    offset: np.ndarray
    scale: np.ndarray
    groups: tuple = (None,)
    flagged: tuple = ()

    def __post_init__(self):
        if self.kind not in SCALING_KINDS:
            raise ConfigError(f"unknown scaling kind {self.kind!r}")
        object.__setattr__(self, "offset", _frozen(np.atleast_2d(self.offset)))
        object.__setattr__(self, "scale", _frozen(np.atleast_2d(self.scale)))
        if self.offset.shape != self.scale.shape:
            raise ConfigError("offset/scale shape mismatch")
        if np.any(self.scale == 0):
            raise ConfigError("scale entries must be nonzero")

    @classmethod
    def identity(cls, n_columns):
        return cls("none", np.zeros((1, n_columns)), np.ones((1, n_columns)))

    def _rows(self, group_labels, n):
        if len(self.groups) == 1 and self.groups[0] is None:
            return np.zeros(n, dtype=int)
        lookup = {g: i for i, g in enumerate(self.groups)}
        try:
            return np.array([lookup[g] for g in group_labels], dtype=int)
        except (KeyError, TypeError) as exc:
            raise DataError(f"group label {exc} not present in scaling record") from None

    def apply(self, x, group_labels=None):
        rows = self._rows(group_labels, len(x))
        return (x - self.offset[rows]) / self.scale[rows]

    def invert(self, x, group_labels=None):
        rows = self._rows(group_labels, len(x))
        return x * self.scale[rows] + self.offset[rows]

    def to_dict(self):
        return {
            "kind": self.kind,
            "groups": list(self.groups),
            "offset": self.offset.tolist(),
            "scale": self.scale.tolist(),
            "flagged": list(self.flagged),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            offset=np.asarray(d["offset"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
            groups=tuple(d.get("groups", [None])),
            flagged=tuple(d.get("flagged", ())),
        )


@dataclass(frozen=True)
class SensorDataset:
    """Snapshot matrix of candidate readings with the matching targets.

    ``source_index[j]`` is the index of column ``j`` in the dataset this one
    was reduced from (identity for freshly loaded data).
    """

    values: np.ndarray
    targets: np.ndarray
    sensor_ids: tuple
    target_ids: tuple
    value_scaling: ScalingRecord | None = None
    target_scaling: ScalingRecord | None = None
    groups: tuple | None = None
    source_index: tuple | None = None

    def __post_init__(self):
        values = _frozen(self.values, ndim=2)
        targets = _frozen(self.targets, ndim=2)
        if values.ndim != 2 or targets.ndim != 2:
            raise DataError("values and targets must be 2-D")
        if values.shape[0] != targets.shape[0]:
            raise DataError(
                f"row count mismatch: {values.shape[0]} values vs {targets.shape[0]} targets"
            )
        if values.shape[1] < 1 or targets.shape[1] < 1:
            raise DataError("need at least one candidate and one target column")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(targets))):
            raise DataError("non-finite entries in dataset")
        sensor_ids = tuple(str(s) for s in self.sensor_ids)
        target_ids = tuple(str(s) for s in self.target_ids)
        if len(sensor_ids) != values.shape[1] or len(target_ids) != targets.shape[1]:
            raise DataError("identifier count does not match column count")
        if len(set(sensor_ids)) != len(sensor_ids):
            raise DataError("sensor_ids must be unique")
        groups = self.groups
        if groups is not None:
            groups = tuple(str(g) for g in groups)
            if len(groups) != values.shape[0]:
                raise DataError("group labels must have one entry per snapshot")
        source = self.source_index
        source = tuple(range(values.shape[1])) if source is None else tuple(int(i) for i in source)
        if len(source) != values.shape[1]:
            raise DataError("source_index length must equal candidate count")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "sensor_ids", sensor_ids)
        object.__setattr__(self, "target_ids", target_ids)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "source_index", source)

    @property
    def n_snapshots(self):
        return self.values.shape[0]

    @property
    def n_candidates(self):
        return self.values.shape[1]

    @property
    def n_targets(self):
        return self.targets.shape[1]

    def select_columns(self, columns):
        """Dataset restricted to candidate ``columns`` (in the given order)."""
        columns = [int(c) for c in columns]
        vs = self.value_scaling
        if vs is not None:
            vs = replace(vs, offset=vs.offset[:, columns], scale=vs.scale[:, columns],
                         flagged=tuple(columns.index(f) for f in vs.flagged if f in columns))
        return replace(
            self,
            values=self.values[:, columns],
            sensor_ids=[self.sensor_ids[c] for c in columns],
            value_scaling=vs,
            source_index=[self.source_index[c] for c in columns],
        )

    def select_rows(self, rows):
        rows = np.asarray(rows, dtype=int)
        groups = None if self.groups is None else [self.groups[r] for r in rows]
        return replace(self, values=self.values[rows], targets=self.targets[rows], groups=groups)


def _group_rows(groups, n):
    if groups is None:
        return [None], [np.arange(n)]
    labels = sorted(set(groups))
    arr = np.asarray(groups)
    return labels, [np.flatnonzero(arr == g) for g in labels]


def _fit_scaling(x, kind, groups):
    labels, row_sets = _group_rows(groups, len(x))
    offset = np.zeros((len(labels), x.shape[1]))
    scale = np.ones((len(labels), x.shape[1]))
    flagged = set()
    if kind == "none":
        return ScalingRecord("none", offset, scale, tuple(labels))
    for g, rows in enumerate(row_sets):
        if len(rows) < 2:
            raise DataError(f"scaling needs at least 2 snapshots per group, got {len(rows)}")
        block = x[rows]
        mean = block.mean(axis=0)
        if kind == "range_pm1":
            spread = block.max(axis=0) - block.min(axis=0)
        else:
            spread = block.std(axis=0)
        bad = spread == 0
        flagged.update(np.flatnonzero(bad).tolist())
        offset[g] = mean
        scale[g] = np.where(bad, 1.0, spread)
    return ScalingRecord(kind, offset, scale, tuple(labels), tuple(sorted(flagged)))


def apply_scaling(ds: SensorDataset, kind: str, include_targets: bool = True) -> SensorDataset:
    """Scale every column of ``ds`` (per group when group labels exist).

    ``range_pm1`` maps x to (x - mean) / (max - min); ``zscore`` to zero mean,
    unit population variance. Degenerate columns keep scale 1 and are listed
    in ``ScalingRecord.flagged``. Scaling an already scaled dataset is refused.
    """
    if kind not in SCALING_KINDS:
        raise ConfigError(f"unknown scaling kind {kind!r}; expected one of {SCALING_KINDS}")
    if ds.value_scaling is not None and ds.value_scaling.kind != "none":
        raise DataError("dataset is already scaled; invert first")
    vrec = _fit_scaling(ds.values, kind, ds.groups)
    values = vrec.apply(ds.values, ds.groups)
    targets = ds.targets
    trec = None
    if include_targets:
        trec = _fit_scaling(ds.targets, kind, ds.groups)
        targets = trec.apply(ds.targets, ds.groups)
    return replace(ds, values=values, targets=targets, value_scaling=vrec, target_scaling=trec)


def invert_scaling(ds: SensorDataset) -> SensorDataset:
    values, targets = ds.values, ds.targets
    if ds.value_scaling is not None:
        values = ds.value_scaling.invert(values, ds.groups)
    if ds.target_scaling is not None:
        targets = ds.target_scaling.invert(targets, ds.groups)
    return replace(ds, values=values, targets=targets, value_scaling=None, target_scaling=None)


# ---------------------------------------------------------------- CSV I/O


def _parse_float(text, line, column):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {text!r} as a number", line) from None
    if not math.isfinite(v):
        raise DataError(f"line {line}: column {column!r}: non-finite value {text!r}")
    return v


def load_dataset(path, target_columns: Sequence[str], group_column: str = GROUP_COLUMN) -> SensorDataset:
    """Read a header-first CSV; ``target_columns`` become targets, the rest candidates.

    A column named ``group_column`` (if present) carries group labels and is
    neither a candidate nor a target.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    return parse_dataset(text, target_columns, group_column)


def parse_dataset(text, target_columns, group_column=GROUP_COLUMN):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", 1) from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header", 1)
    target_columns = list(target_columns)
    if not target_columns:
        raise ConfigError("at least one target column is required")
    unknown = [t for t in target_columns if t not in header]
    if unknown:
        raise ConfigError(f"unknown target column(s) {unknown}; header has {header}")
    gcol = header.index(group_column) if group_column in header else None
    tcols = [header.index(t) for t in target_columns]
    ccols = [i for i in range(len(header)) if i not in tcols and i != gcol]
    if not ccols:
        raise DataError("no candidate columns left after removing targets")
    rows, targets, groups = [], [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(rec)}", lineno)
        rows.append([_parse_float(rec[i], lineno, header[i]) for i in ccols])
        targets.append([_parse_float(rec[i], lineno, header[i]) for i in tcols])
        if gcol is not None:
            groups.append(rec[gcol].strip())
    if not rows:
        raise DataError("dataset has no data rows")
    return SensorDataset(
        values=np.array(rows),
        targets=np.array(targets),
        sensor_ids=[header[i] for i in ccols],
        target_ids=target_columns,
        groups=groups if gcol is not None else None,
    )


def format_float(v):
    return repr(float(v))


def dataset_to_csv(ds: SensorDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(ds.sensor_ids) + list(ds.target_ids)
    if ds.groups is not None:
        header.append(GROUP_COLUMN)
    writer.writerow(header)
    for i in range(ds.n_snapshots):
        row = [format_float(v) for v in ds.values[i]] + [format_float(v) for v in ds.targets[i]]
        if ds.groups is not None:
            row.append(ds.groups[i])
        writer.writerow(row)
    return buf.getvalue()


def save_dataset(ds: SensorDataset, path) -> None:
    Path(path).write_text(dataset_to_csv(ds), encoding="utf-8", newline="\n")


# ---------------------------------------------------------- selection results


@dataclass(frozen=True)
class SelectionResult:
    """Sensor indices chosen by one placement method.

    ``ordered`` is True when ``selected`` is an importance ranking. When
    ``scores`` are given for an ordered result, ``selected`` must run in
    descending score order with ties going to the lower index.
    """

    method: str
    selected: tuple
    k: int
    n_candidates: int
    ordered: bool = True
    scores: tuple | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        selected = tuple(int(i) for i in self.selected)
        object.__setattr__(self, "selected", selected)
        if self.scores is not None:
            object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if len(set(selected)) != len(selected):
            raise DataError(f"{self.method}: duplicate sensor indices in {selected}")
        if len(selected) != self.k:
            raise DataError(f"{self.method}: expected {self.k} sensors, got {len(selected)}")
        bad = [i for i in selected if not 0 <= i < self.n_candidates]
        if bad:
            raise DataError(f"{self.method}: indices {bad} outside [0, {self.n_candidates})")
        if self.scores is not None:
            if len(self.scores) != self.n_candidates:
                raise DataError("scores must have one entry per candidate")
            if self.ordered:
                keys = [(-self.scores[i], i) for i in selected]
                if keys != sorted(keys):
                    raise DataError(f"{self.method}: selection order inconsistent with scores")

    def to_dict(self) -> dict[str, Any]:
        d = {
            "method": self.method,
            "k": self.k,
            "n_candidates": self.n_candidates,
            "selected": list(self.selected),
            "ordered": self.ordered,
            "scores": None if self.scores is None else list(self.scores),
            "metadata": self.metadata,
        }
        return d

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(
            method=d["method"],
            selected=d["selected"],
            k=d["k"],
            n_candidates=d["n_candidates"],
            ordered=d.get("ordered", True),
            scores=d.get("scores"),
            metadata=d.get("metadata") or {},
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def rank_descending(scores) -> np.ndarray:
    """Indices sorted by descending score, ties by ascending index."""
    scores = np.asarray(scores, dtype=float)
    return np.lexsort((np.arange(len(scores)), -scores))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, non-finite floats as strings."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
