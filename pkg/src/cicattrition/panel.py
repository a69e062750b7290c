"""Observed two-period panel with follow-up attrition.

Every unit has a baseline outcome ``y0``; the follow-up outcome ``y1`` is
only recorded for respondents (``r == 1``).  Internally the follow-up column
is a float array holding NaN for attritors, but the public constructors
enforce that a value is present exactly when ``r == 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_COLUMNS = {
    "id": "id",
    "g": "g",
    "r": "r",
    "y0": "y0",
    "y1": "y1",
    "cluster": "cluster",
}

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


class PanelDataError(ValueError):
    """Raised when input records violate the observed-data model."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        self.detail = message
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class EmptyCellError(PanelDataError):
    """A (g, r) cell that an estimator needs has no units."""

    def __init__(self, g: int, r: int, detail: str = ""):
        self.cell = (g, r)
        msg = f"empty cell (g={g}, r={r})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass(frozen=True)
class UnitRecord:
    id: str
    g: int
    r: int
    y0: float
    y1: float | None = None
    cluster: str | None = None

    def __post_init__(self):
        _check_unit(self.g, self.r, self.y0, self.y1)


def _check_unit(g, r, y0, y1, row=None):
    if g not in (0, 1):
        raise PanelDataError(f"g must be 0 or 1, got {g!r}", row, "g")
    if r not in (0, 1):
        raise PanelDataError(f"r must be 0 or 1, got {r!r}", row, "r")
    if not math.isfinite(y0):
        raise PanelDataError("y0 must be finite", row, "y0")
    if r == 0 and y1 is not None:
        raise PanelDataError("y1 present with r=0", row, "y1")
    if r == 1:
        if y1 is None:
            raise PanelDataError("y1 absent with r=1", row, "y1")
        if not math.isfinite(y1):
            raise PanelDataError("y1 must be finite", row, "y1")


@dataclass(frozen=True, eq=False)
class PanelSample:
    """Immutable column store of unit records.

    Use :meth:`from_records` or :meth:`from_arrays` rather than the raw
    constructor; they validate the response/outcome invariant.
    """

    ids: np.ndarray
    g: np.ndarray
    r: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    cluster: np.ndarray | None = None
    _validated: bool = field(default=False, repr=False)

    @classmethod
    def from_records(cls, records: Iterable[UnitRecord]) -> "PanelSample":
        records = list(records)
        has_cluster = any(rec.cluster is not None for rec in records)
        return cls(
            ids=np.array([rec.id for rec in records], dtype=object),
            g=np.array([rec.g for rec in records], dtype=np.int8),
            r=np.array([rec.r for rec in records], dtype=np.int8),
            y0=np.array([rec.y0 for rec in records], dtype=float),
            y1=np.array([np.nan if rec.y1 is None else rec.y1 for rec in records], dtype=float),
            cluster=np.array([rec.cluster for rec in records], dtype=object) if has_cluster else None,
            _validated=True,
        )

    @classmethod
    def from_arrays(cls, g, r, y0, y1, ids=None, cluster=None, validate=True) -> "PanelSample":
        """Build a sample from column arrays; ``y1`` entries for attritors are ignored."""
        g = np.asarray(g, dtype=np.int8)
        r = np.asarray(r, dtype=np.int8)
        y0 = np.asarray(y0, dtype=float)
        y1 = np.where(np.asarray(r) == 1, np.asarray(y1, dtype=float), np.nan)
        n = len(g)
        if not (len(r) == len(y0) == len(y1) == n):
            raise PanelDataError("column arrays differ in length")
        if validate:
            if not np.isin(g, (0, 1)).all():
                raise PanelDataError("g must be binary", column="g")
            if not np.isin(r, (0, 1)).all():
                raise PanelDataError("r must be binary", column="r")
            if not np.isfinite(y0).all():
                raise PanelDataError("y0 must be finite", column="y0")
            if not np.isfinite(y1[r == 1]).all():
                raise PanelDataError("y1 must be finite for respondents", column="y1")
        if ids is None:
            ids = np.array([str(i) for i in range(n)], dtype=object)
        else:
            ids = np.asarray(ids, dtype=object)
        if cluster is not None:
            cluster = np.asarray(cluster, dtype=object)
        return cls(ids=ids, g=g, r=r, y0=y0, y1=y1, cluster=cluster, _validated=True)

    def __len__(self) -> int:
        return len(self.g)

    @property
    def n(self) -> int:
        return len(self.g)

    @property
    def records(self) -> list[UnitRecord]:
        out = []
        for i in range(self.n):
            r = int(self.r[i])
            out.append(
                UnitRecord(
                    id=str(self.ids[i]),
                    g=int(self.g[i]),
                    r=r,
                    y0=float(self.y0[i]),
                    y1=float(self.y1[i]) if r == 1 else None,
                    cluster=None if self.cluster is None else self.cluster[i],
                )
            )
        return out

    @cached_property
    def _cell_index(self) -> dict[tuple[int, int], np.ndarray]:
        code = 2 * self.g.astype(np.int64) + self.r
        return {(g, r): np.flatnonzero(code == 2 * g + r) for g, r in CELLS}

    @cached_property
    def counts(self) -> dict[tuple[int, int], int]:
        return {cell: len(idx) for cell, idx in self._cell_index.items()}

    @property
    def weights(self) -> dict[tuple[int, int], Fraction]:
        """Cell probabilities P(G=g, R=r) as exact fractions."""
        if self.n == 0:
            raise PanelDataError("empty sample")
        return {cell: Fraction(k, self.n) for cell, k in self.counts.items()}

    def cell(self, g: int, r: int, field: str = "y0") -> np.ndarray:
        """Values of ``field`` for units in cell (g, r), in record order.

        Raises EmptyCellError if the cell has no units.
        """
        if field not in ("y0", "y1"):
            raise ValueError(f"field must be 'y0' or 'y1', got {field!r}")
        if field == "y1" and r != 1:
            raise PanelDataError("y1 is only observed for respondents (r=1)")
        idx = self._cell_index[(g, r)]
        if len(idx) == 0:
            raise EmptyCellError(g, r)
        return getattr(self, field)[idx]

    def take(self, indices: np.ndarray) -> "PanelSample":
        """Sub-sample (with repetition allowed) by integer positions."""
        return PanelSample(
            ids=self.ids[indices],
            g=self.g[indices],
            r=self.r[indices],
            y0=self.y0[indices],
            y1=self.y1[indices],
            cluster=None if self.cluster is None else self.cluster[indices],
            _validated=True,
        )


def subsample(sample: PanelSample, g: int, r: int, field: str) -> np.ndarray:
    return sample.cell(g, r, field)


def attrition_summary(sample: PanelSample) -> dict:
    """Attrition rates overall and by arm, plus mean baseline outcome per cell."""
    if sample.n == 0:
        raise PanelDataError("empty sample")
    counts = sample.counts
    n_t = counts[(1, 0)] + counts[(1, 1)]
    n_c = counts[(0, 0)] + counts[(0, 1)]
    baseline = {}
    for (g, r), idx in sample._cell_index.items():
        baseline[f"g{g}_r{r}"] = float(sample.y0[idx].mean()) if len(idx) else None
    return {
        "n": sample.n,
        "counts": {f"g{g}_r{r}": counts[(g, r)] for g, r in CELLS},
        "overall": (counts[(0, 0)] + counts[(1, 0)]) / sample.n,
        "treatment": counts[(1, 0)] / n_t if n_t else None,
        "control": counts[(0, 0)] / n_c if n_c else None,
        "mean_y0": baseline,
    }


def _parse_binary(text: str, row: int, column: str) -> int:
    text = text.strip()
    try:
        value = float(text)
    except ValueError:
        raise PanelDataError(f"cannot parse {text!r} as 0/1", row, column) from None
    if value not in (0.0, 1.0):
        raise PanelDataError(f"non-binary value {text!r}", row, column)
    return int(value)


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise PanelDataError(f"cannot parse {text!r} as a number", row, column) from None
    if not math.isfinite(value):
        raise PanelDataError(f"non-finite value {text!r}", row, column)
    return value


def read_records(path, columns: Mapping[str, str] | None = None, collect_errors: bool = False):
    """Parse a CSV file into UnitRecords.

    Row numbers in errors count the header as row 1, so the first data row
    is row 2 (matching what a spreadsheet shows).  With ``collect_errors``
    every bad row is reported and ``(records, errors)`` is returned.
    """
    cols = dict(DEFAULT_COLUMNS)
    if columns:
        cols.update(columns)
    records: list[UnitRecord] = []
    errors: list[PanelDataError] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in ("g", "r", "y0", "y1"):
            if cols[key] not in header:
                raise PanelDataError(f"missing required column {cols[key]!r}")
        has_id = cols["id"] in header
        has_cluster = cols.get("cluster") in header
        for i, row in enumerate(reader):
            rownum = i + 2
            try:
                if None in row or any(row.get(cols[k]) is None for k in ("g", "r", "y0", "y1")):
                    raise PanelDataError("wrong number of fields", rownum)
                g = _parse_binary(row[cols["g"]], rownum, cols["g"])
                r = _parse_binary(row[cols["r"]], rownum, cols["r"])
                y0_text = row[cols["y0"]].strip()
                if y0_text == "":
                    raise PanelDataError("missing baseline outcome", rownum, cols["y0"])
                y0 = _parse_float(y0_text, rownum, cols["y0"])
                y1_text = row[cols["y1"]].strip()
                y1 = None if y1_text == "" else _parse_float(y1_text, rownum, cols["y1"])
                if r == 0 and y1 is not None:
                    raise PanelDataError("y1 present with r=0", rownum, cols["y1"])
                if r == 1 and y1 is None:
                    raise PanelDataError("y1 absent with r=1", rownum, cols["y1"])
                cluster = None
                if has_cluster:
                    cluster = row[cols["cluster"]].strip() or None
                rid = row[cols["id"]] if has_id else str(i)
                records.append(UnitRecord(rid, g, r, y0, y1, cluster))
            except PanelDataError as exc:
                if not collect_errors:
                    raise
                errors.append(exc)
    if collect_errors:
        return records, errors
    return records


def load_csv(path, columns: Mapping[str, str] | None = None) -> PanelSample:
    """Load and validate a panel CSV (empty ``y1`` cell = not observed)."""
    if not Path(path).exists():
        raise FileNotFoundError(path)
    return PanelSample.from_records(read_records(path, columns))


def save_csv(sample: PanelSample, path, columns: Mapping[str, str] | None = None) -> None:
    cols = dict(DEFAULT_COLUMNS)
    if columns:
        cols.update(columns)
    keys: Sequence[str] = ["id", "g", "r", "y0", "y1"]
    if sample.cluster is not None:
        keys = [*keys, "cluster"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([cols[k] for k in keys])
        for rec in sample.records:
            row = [rec.id, rec.g, rec.r, repr(rec.y0), "" if rec.y1 is None else repr(rec.y1)]
            if sample.cluster is not None:
                row.append("" if rec.cluster is None else rec.cluster)
            writer.writerow(row)
