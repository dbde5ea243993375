"""Shared data model: rectangular dataset with a missingness mask, seeded RNG
streams, and scalar link utilities."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

# Canonical study schema. A is the continuous auxiliary, Z1-Z5 binary
# confounders, X the binary exposure, Y the continuous outcome.
STUDY_COLUMNS = ("A", "Z1", "Z2", "Z3", "Z4", "Z5", "X", "Y")
BINARY_COLUMNS = frozenset({"Z1", "Z2", "Z3", "Z4", "Z5", "X"})
CONFOUNDERS = ("Z1", "Z2", "Z3", "Z4", "Z5")
ANALYSIS_COLUMNS = ("Z1", "Z2", "Z3", "Z4", "Z5", "X", "Y")

BINARY = "binary"
CONTINUOUS = "continuous"

_NA_STRINGS = {"", "NA"}


class DataError(ValueError):
    """Raised when a dataset violates its schema (bad binary cell, unknown
    column, malformed CSV)."""


def logit_inv(x):
    """Inverse logit exp(x)/(1+exp(x)), stable for |x| up to ~700.

    Accepts scalars or arrays; uses the 1/(1+exp(-x)) branch for positive
    arguments so neither branch overflows.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


def logit(p):
    p = np.asarray(p, dtype=float)
    out = np.log(p) - np.log1p(-p)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RngStream:
    """Descriptor of a deterministic random stream.

    (master_seed, key) fully determines the draw sequence via numpy's
    counter-based SeedSequence splitting, so replication r always receives
    the same stream no matter how work is scheduled. Streams are cheap
    values; derive children freely with .child().
    """

    master_seed: int
    key: tuple[int, ...] = ()

    def child(self, *ids: int) -> "RngStream":
        return replace(self, key=self.key + ids)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the head of this stream.

        Each call restarts the stream; callers wanting multiple independent
        sources should derive children rather than calling twice.
        """
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class Dataset:
    """Immutable n x p numeric table with a per-cell missingness mask.

    mask[i, j] is True when cell (i, j) is missing. The stored value under a
    masked cell is retained (the simulator keeps the underlying truth there)
    but estimators must access data through column()/complete views, which
    blank masked cells to NaN.
    """

    names: tuple[str, ...]
    kinds: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        mask = self.mask
        if mask is None:
            mask = np.zeros(values.shape, dtype=bool)
        mask = np.ascontiguousarray(np.asarray(mask, dtype=bool))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        if values.ndim != 2:
            raise DataError("values must be a 2-d matrix")
        # n = 0 is legal so complete_cases can return an empty selection;
        # estimators reject empty inputs at their own boundaries
        if mask.shape != values.shape:
            raise DataError("mask shape differs from values shape")
        if len(self.names) != values.shape[1] or len(self.kinds) != values.shape[1]:
            raise DataError("column metadata does not match matrix width")
        if len(set(self.names)) != len(self.names):
            raise DataError("column names must be unique")
        for kind in self.kinds:
            if kind not in (BINARY, CONTINUOUS):
                raise DataError(f"unknown column kind {kind!r}")
        for j, (name, kind) in enumerate(zip(self.names, self.kinds)):
            col = values[:, j]
            if not np.all(np.isfinite(col[~mask[:, j]])):
                raise DataError(f"non-finite observed value in column {name}")
            if kind == BINARY:
                obs = col[~mask[:, j]]
                if not np.all((obs == 0.0) | (obs == 1.0)):
                    raise DataError(f"binary column {name} has values outside {{0,1}}")
        values.setflags(write=False)
        mask.setflags(write=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"no column named {name}") from None

    def column(self, name: str) -> np.ndarray:
        """Column values with masked cells blanked to NaN."""
        j = self.index(name)
        col = self.values[:, j].copy()
        col[self.mask[:, j]] = np.nan
        return col

    def raw_column(self, name: str) -> np.ndarray:
        """Underlying values including masked cells (oracle use only)."""
        return self.values[:, self.index(name)].copy()

    def observed(self, name: str) -> np.ndarray:
        """Boolean vector, True where the column is observed."""
        return ~self.mask[:, self.index(name)]

    def kind(self, name: str) -> str:
        return self.kinds[self.index(name)]

    def take(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.names, self.kinds, self.values[rows], self.mask[rows])

    def with_values(self, values: np.ndarray, mask: np.ndarray) -> "Dataset":
        return Dataset(self.names, self.kinds, values, mask)

    def drop_columns(self, names: set[str]) -> "Dataset":
        keep = [j for j, nm in enumerate(self.names) if nm not in names]
        return Dataset(
            tuple(self.names[j] for j in keep),
            tuple(self.kinds[j] for j in keep),
            self.values[:, keep],
            self.mask[:, keep],
        )

    def append_column(self, name: str, kind: str, col: np.ndarray) -> "Dataset":
        col = np.asarray(col, dtype=float).reshape(-1, 1)
        return Dataset(
            self.names + (name,),
            self.kinds + (kind,),
            np.hstack([self.values, col]),
            np.hstack([self.mask, np.zeros((self.n, 1), dtype=bool)]),
        )


def study_dataset(values: np.ndarray, mask: np.ndarray | None = None) -> Dataset:
    """Dataset over the canonical A,Z1..Z5,X,Y schema."""
    kinds = tuple(BINARY if c in BINARY_COLUMNS else CONTINUOUS for c in STUDY_COLUMNS)
    return Dataset(STUDY_COLUMNS, kinds, values, mask)


def rows_complete(d: Dataset, names) -> np.ndarray:
    """True per row when every column in `names` is observed."""
    idx = [d.index(nm) for nm in names]
    if not idx:
        return np.ones(d.n, dtype=bool)
    return ~d.mask[:, idx].any(axis=1)


def complete_cases(d: Dataset, names) -> Dataset:
    """Rows with no missing cell in any of `names`, order preserved.

    May return an empty selection; callers decide whether that is fatal.
    """
    keep = rows_complete(d, names)
    return d.take(np.flatnonzero(keep))


def write_csv(d: Dataset, path_or_buf) -> None:
    """Write in the canonical CSV layout; missing cells serialize as NA."""
    if d.names != STUDY_COLUMNS:
        raise DataError("CSV layout is defined for the canonical study columns")
    own = isinstance(path_or_buf, (str, bytes))
    f = open(path_or_buf, "w", encoding="utf-8", newline="") if own else path_or_buf
    try:
        f.write(",".join(STUDY_COLUMNS) + "\n")
        for i in range(d.n):
            cells = []
            for j in range(len(STUDY_COLUMNS)):
                if d.mask[i, j]:
                    cells.append("NA")
                else:
                    cells.append(format_float(d.values[i, j]))
            f.write(",".join(cells) + "\n")
    finally:
        if own:
            f.close()


def read_csv(path_or_buf) -> Dataset:
    """Read the canonical CSV layout; empty fields and NA both mean missing."""
    own = isinstance(path_or_buf, (str, bytes))
    f = open(path_or_buf, "r", encoding="utf-8") if own else path_or_buf
    try:
        header = f.readline().strip()
        if tuple(header.split(",")) != STUDY_COLUMNS:
            raise DataError(f"unexpected CSV header {header!r}")
        rows, miss = [], []
        for line_no, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(STUDY_COLUMNS):
                raise DataError(f"line {line_no}: expected {len(STUDY_COLUMNS)} fields")
            vals, m = [], []
            for cell in parts:
                if cell in _NA_STRINGS:
                    vals.append(0.0)
                    m.append(True)
                else:
                    try:
                        vals.append(float(cell))
                    except ValueError:
                        raise DataError(f"line {line_no}: bad numeric cell {cell!r}") from None
                    m.append(False)
            rows.append(vals)
            miss.append(m)
        if not rows:
            raise DataError("CSV has no data rows")
        return study_dataset(np.array(rows, dtype=float), np.array(miss, dtype=bool))
    finally:
        if own:
            f.close()


def csv_text(d: Dataset) -> str:
    buf = io.StringIO()
    write_csv(d, buf)
    return buf.getvalue()


def format_float(x: float) -> str:
    """Shortest decimal string that round-trips the float64 exactly."""
    return repr(float(x))
