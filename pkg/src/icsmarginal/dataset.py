"""Clustered samples: data model, weighting schemes and long-format CSV I/O.

A :class:`ClusteredSample` stores all observations in flat arrays ordered
cluster by cluster (cluster order = order of first appearance, within-cluster
order = file order).  Cluster-level views (:class:`Cluster`,
:class:`Observation`) are materialised on demand.
"""

from __future__ import annotations

import csv
import io
import math
import os
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import TextIO

import numpy as np

from icsmarginal.errors import (
    CensoredDataError,
    EmptyInputError,
    ICSError,
    ParseError,
    SchemaError,
)

__all__ = [
    "INTERCEPT",
    "Cluster",
    "ClusteredSample",
    "CsvSchema",
    "Observation",
    "SizeDiagnostic",
    "SizeGroup",
    "WeightingScheme",
    "informativeness_diagnostic",
    "load_long_csv",
    "observation_weights",
    "write_long_csv",
]

INTERCEPT = "(Intercept)"


class WeightingScheme(str, Enum):
    """How observations are weighted when forming marginal statistics."""

    FIRST_OBSERVATION = "first"
    INVERSE_CLUSTER_SIZE = "ics"
    NAIVE_POOLED = "naive"

    @classmethod
    def parse(cls, value: WeightingScheme | str) -> WeightingScheme:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "first": cls.FIRST_OBSERVATION,
            "firstobservation": cls.FIRST_OBSERVATION,
            "ics": cls.INVERSE_CLUSTER_SIZE,
            "inverseclustersize": cls.INVERSE_CLUSTER_SIZE,
            "naive": cls.NAIVE_POOLED,
            "naivepooled": cls.NAIVE_POOLED,
        }
        try:
            return aliases[key.replace("_", "").replace("-", "")]
        except KeyError:
            raise ValueError(f"unknown weighting scheme {value!r}") from None


@dataclass(frozen=True)
class Observation:
    outcome: tuple[float, ...]
    covariates: tuple[float, ...] | None
    within_cluster_index: int
    censored: bool = False


@dataclass(frozen=True)
class Cluster:
    id: str
    observations: tuple[Observation, ...]

    @property
    def size(self) -> int:
        return len(self.observations)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ClusteredSample:
    """Independent clusters of (possibly bivariate) outcomes.

    Parameters
    ----------
    y : array, shape (N,) or (N, d)
        Outcomes stacked cluster by cluster; ``d`` is 1 or 2.
    sizes : array of int, shape (M,)
        Cluster sizes ``N_i``; must sum to ``N``.
    ids : sequence of str, optional
        Unique cluster labels (default ``"1", ..., "M"``).
    x : array, shape (N, p), optional
        Covariate rows aligned with ``y``.
    censored : array of bool, shape (N,), optional
        Right-censoring flags (recurrent-event data).
    """

    y: np.ndarray
    sizes: np.ndarray
    ids: tuple[str, ...] = ()
    x: np.ndarray | None = None
    censored: np.ndarray | None = None
    y_names: tuple[str, ...] = ()
    x_names: tuple[str, ...] = ()
    offsets: np.ndarray = field(init=False, repr=False)
    codes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[1] not in (1, 2):
            raise ICSError(f"outcome must have dimension 1 or 2, got shape {y.shape}")
        sizes = np.asarray(self.sizes)
        if sizes.ndim != 1 or sizes.size == 0:
            raise EmptyInputError("a clustered sample needs at least one cluster")
        if not np.issubdtype(sizes.dtype, np.integer):
            if not np.all(sizes == np.round(sizes)):
                raise ICSError("cluster sizes must be integers")
        sizes = sizes.astype(np.int64)
        if np.any(sizes < 1):
            raise ICSError("every cluster needs at least one observation")
        if int(sizes.sum()) != y.shape[0]:
            raise ICSError(
                f"cluster sizes sum to {int(sizes.sum())} but {y.shape[0]} outcomes given"
            )
        if not np.all(np.isfinite(y)):
            raise ICSError("outcomes must be finite")

        ids = tuple(str(i) for i in self.ids) if self.ids else tuple(
            str(i + 1) for i in range(sizes.size)
        )
        if len(ids) != sizes.size:
            raise ICSError("number of cluster ids does not match number of clusters")
        if len(set(ids)) != len(ids):
            raise ICSError("cluster ids must be unique")

        x = None
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != y.shape[0]:
                raise ICSError("covariate rows do not match the number of outcomes")
            if not np.all(np.isfinite(x)):
                raise ICSError("covariates must be finite")
        censored = None
        if self.censored is not None:
            censored = np.asarray(self.censored, dtype=bool)
            if censored.shape != (y.shape[0],):
                raise ICSError("censoring flags must have one entry per observation")

        y_names = tuple(self.y_names) or (
            ("y",) if y.shape[1] == 1 else ("y1", "y2")
        )
        if len(y_names) != y.shape[1]:
            raise ICSError("y_names length does not match outcome dimension")
        x_names: tuple[str, ...] = ()
        if x is not None:
            x_names = tuple(self.x_names) or tuple(f"x{k + 1}" for k in range(x.shape[1]))
            if len(x_names) != x.shape[1]:
                raise ICSError("x_names length does not match covariate dimension")

        offsets = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)
        codes = np.repeat(np.arange(sizes.size, dtype=np.int64), sizes)
        for name, value in (
            ("y", _frozen(y)),
            ("sizes", _frozen(sizes)),
            ("ids", ids),
            ("x", None if x is None else _frozen(x)),
            ("censored", None if censored is None else _frozen(censored)),
            ("y_names", y_names),
            ("x_names", x_names),
            ("offsets", _frozen(offsets)),
            ("codes", _frozen(codes)),
        ):
            object.__setattr__(self, name, value)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_groups(
        cls,
        groups: Sequence[Sequence[float]] | Sequence[np.ndarray],
        ids: Sequence[str] | None = None,
        covariates: Sequence[np.ndarray] | None = None,
        **kwargs,
    ) -> ClusteredSample:
        """Build a sample from one outcome array per cluster.

        >>> ClusteredSample.from_groups([[1, 3], [5]]).sizes.tolist()
        [2, 1]
        """
        arrays = [np.asarray(g, dtype=float) for g in groups]
        if not arrays:
            raise EmptyInputError("a clustered sample needs at least one cluster")
        sizes = [a.shape[0] for a in arrays]
        y = np.concatenate([a if a.ndim > 1 else a.reshape(-1) for a in arrays])
        x = None
        if covariates is not None:
            # a 1-D array per cluster is one covariate, not one row
            mats = [np.asarray(c, dtype=float) for c in covariates]
            x = np.concatenate([m if m.ndim == 2 else m.reshape(-1, 1) for m in mats])
        return cls(y=y, sizes=np.asarray(sizes), ids=tuple(ids or ()), x=x, **kwargs)

    @classmethod
    def from_clusters(cls, clusters: Iterable[Cluster]) -> ClusteredSample:
        clusters = list(clusters)
        if not clusters:
            raise EmptyInputError("a clustered sample needs at least one cluster")
        outcomes, covs, flags, sizes = [], [], [], []
        for c in clusters:
            if not c.observations:
                raise ICSError(f"cluster {c.id!r} is empty")
            idx = [o.within_cluster_index for o in c.observations]
            if len(set(idx)) != len(idx) or min(idx) < 1:
                raise ICSError(f"cluster {c.id!r}: within-cluster indices must be unique and 1-based")
            sizes.append(len(c.observations))
            for o in c.observations:
                outcomes.append(o.outcome)
                covs.append(o.covariates)
                flags.append(o.censored)
        has_x = [cv is not None for cv in covs]
        if any(has_x) and not all(has_x):
            raise ICSError("either all or no observations must carry covariates")
        x = np.asarray(covs, dtype=float) if all(has_x) else None
        return cls(
            y=np.asarray(outcomes, dtype=float),
            sizes=np.asarray(sizes),
            ids=tuple(c.id for c in clusters),
            x=x,
            censored=np.asarray(flags) if any(flags) else None,
        )

    # -- shape --------------------------------------------------------------

    @property
    def n_clusters(self) -> int:
        return int(self.sizes.size)

    @property
    def n_obs(self) -> int:
        return int(self.y.shape[0])

    @property
    def outcome_dim(self) -> int:
        return int(self.y.shape[1])

    @property
    def covariate_dim(self) -> int:
        return 0 if self.x is None else int(self.x.shape[1])

    @property
    def clusters(self) -> tuple[Cluster, ...]:
        out = []
        for i, cid in enumerate(self.ids):
            start, n = int(self.offsets[i]), int(self.sizes[i])
            obs = tuple(
                Observation(
                    outcome=tuple(float(v) for v in self.y[start + j]),
                    covariates=None if self.x is None else tuple(float(v) for v in self.x[start + j]),
                    within_cluster_index=j + 1,
                    censored=bool(self.censored[start + j]) if self.censored is not None else False,
                )
                for j in range(n)
            )
            out.append(Cluster(cid, obs))
        return tuple(out)

    def size_distribution(self) -> dict[int, int]:
        values, counts = np.unique(self.sizes, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    # -- accessors used by the estimators -----------------------------------

    def outcome(self, component: int = 0) -> np.ndarray:
        """One outcome component as a flat array; refuses censored data."""
        self.require_uncensored()
        return self.y[:, component]

    def univariate(self) -> np.ndarray:
        if self.outcome_dim != 1:
            raise ICSError("this operation needs a univariate outcome")
        return self.outcome(0)

    def require_uncensored(self) -> None:
        if self.censored is not None and bool(self.censored.any()):
            raise CensoredDataError(
                "sample contains censored observations; drop them first (--drop-censored)"
            )

    def cluster_sums(self, values: np.ndarray) -> np.ndarray:
        """Per-cluster sums of an observation-level array (fixed summation order)."""
        return np.add.reduceat(np.asarray(values, dtype=float), self.offsets, axis=0)

    def cluster_means(self, values: np.ndarray) -> np.ndarray:
        sums = self.cluster_sums(values)
        if sums.ndim == 1:
            return sums / self.sizes
        return sums / self.sizes.reshape((-1,) + (1,) * (sums.ndim - 1))

    def weights(self, scheme: WeightingScheme | str) -> np.ndarray:
        return observation_weights(self, scheme)

    # -- derived samples ----------------------------------------------------

    def with_outcomes(self, y: np.ndarray) -> ClusteredSample:
        """Same cluster structure with replaced outcomes."""
        y = np.asarray(y, dtype=float)
        same_dim = (y.shape[1] if y.ndim == 2 else 1) == self.outcome_dim
        return ClusteredSample(
            y=y, sizes=self.sizes, ids=self.ids, x=self.x, censored=self.censored,
            y_names=self.y_names if same_dim else (), x_names=self.x_names,
        )

    def take(self, cluster_index: Sequence[int] | np.ndarray, relabel: bool = True) -> ClusteredSample:
        """Sub- or re-sample whole clusters (repeats allowed when ``relabel``)."""
        idx = np.asarray(cluster_index, dtype=np.int64)
        if idx.size == 0:
            raise EmptyInputError("cannot take zero clusters")
        lens = self.sizes[idx]
        starts = self.offsets[idx]
        shift = np.repeat(starts - np.concatenate(([0], np.cumsum(lens)[:-1])), lens)
        flat = shift + np.arange(int(lens.sum()))
        ids = tuple(f"b{k + 1}" for k in range(idx.size)) if relabel else tuple(self.ids[i] for i in idx)
        return ClusteredSample(
            y=self.y[flat],
            sizes=lens,
            ids=ids,
            x=None if self.x is None else self.x[flat],
            censored=None if self.censored is None else self.censored[flat],
            y_names=self.y_names,
            x_names=self.x_names,
        )

    def drop_censored(self) -> ClusteredSample:
        """Remove censored observations; clusters left empty are removed."""
        if self.censored is None or not self.censored.any():
            return self
        keep = ~self.censored
        sizes = np.bincount(self.codes[keep], minlength=self.n_clusters)
        alive = sizes > 0
        if not alive.any():
            raise EmptyInputError("every observation is censored")
        return ClusteredSample(
            y=self.y[keep],
            sizes=sizes[alive],
            ids=tuple(c for c, a in zip(self.ids, alive) if a),
            x=None if self.x is None else self.x[keep],
            y_names=self.y_names,
            x_names=self.x_names,
        )


def observation_weights(sample: ClusteredSample, scheme: WeightingScheme | str) -> np.ndarray:
    """Per-observation weights summing to one.

    ``first``: 1/M on each cluster's first observation; ``ics``: 1/(M N_i)
    on every observation of cluster i; ``naive``: 1/N everywhere.
    """
    scheme = WeightingScheme.parse(scheme)
    m = sample.n_clusters
    if scheme is WeightingScheme.INVERSE_CLUSTER_SIZE:
        return 1.0 / (m * sample.sizes[sample.codes])
    if scheme is WeightingScheme.NAIVE_POOLED:
        return np.full(sample.n_obs, 1.0 / sample.n_obs)
    w = np.zeros(sample.n_obs)
    w[sample.offsets] = 1.0 / m
    return w


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column names for long-format input (one row per observation)."""

    cluster: str
    y: tuple[str, ...]
    x: tuple[str, ...] = ()
    censored: str | None = None
    intercept: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.y, str):
            object.__setattr__(self, "y", (self.y,))
        if isinstance(self.x, str):
            object.__setattr__(self, "x", (self.x,))
        if not self.y:
            raise SchemaError("schema needs at least one outcome column")
        if len(self.y) > 2:
            raise SchemaError("at most two outcome columns are supported")


_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


def _parse_float(cell: str, column: str, row: int) -> float:
    text = cell.strip()
    if text == "":
        raise ParseError(f"missing value in column {column!r}", row)
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r} in column {column!r}", row) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {cell!r} in column {column!r}", row)
    return value


def _read_rows(handle: TextIO, schema: CsvSchema, delimiter: str) -> ClusteredSample:
    reader = csv.reader(handle, delimiter=delimiter)
    header = next(reader, None)
    if header is None:
        raise EmptyInputError("input file is empty")
    header = [h.strip() for h in header]
    wanted = [schema.cluster, *schema.y, *schema.x] + ([schema.censored] if schema.censored else [])
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"column(s) not found in header: {', '.join(missing)}")
    pos = {name: header.index(name) for name in wanted}

    groups: dict[str, list[tuple[list[float], list[float], bool]]] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", row_no)
        cid = row[pos[schema.cluster]].strip()
        if cid == "":
            raise ParseError(f"missing cluster id in column {schema.cluster!r}", row_no)
        ys = [_parse_float(row[pos[c]], c, row_no) for c in schema.y]
        xs = [_parse_float(row[pos[c]], c, row_no) for c in schema.x]
        flag = False
        if schema.censored:
            text = row[pos[schema.censored]].strip().lower()
            if text in _TRUE:
                flag = True
            elif text not in _FALSE:
                raise ParseError(f"bad censoring flag {text!r}", row_no)
        groups.setdefault(cid, []).append((ys, xs, flag))

    if not groups:
        raise EmptyInputError("input file has a header but no data rows")
    ids = list(groups)
    rows = [r for cid in ids for r in groups[cid]]
    y = np.array([r[0] for r in rows], dtype=float)
    x = None
    x_names = tuple(schema.x)
    if schema.x or schema.intercept:
        x = np.array([r[1] for r in rows], dtype=float).reshape(len(rows), len(schema.x))
        if schema.intercept:
            x = np.column_stack([np.ones(len(rows)), x])
            x_names = (INTERCEPT, *x_names)
    flags = np.array([r[2] for r in rows], dtype=bool)
    return ClusteredSample(
        y=y,
        sizes=np.array([len(groups[c]) for c in ids]),
        ids=tuple(ids),
        x=x,
        censored=flags if schema.censored else None,
        y_names=tuple(schema.y),
        x_names=x_names,
    )


def load_long_csv(
    path: str | os.PathLike | TextIO,
    schema: CsvSchema,
    delimiter: str = ",",
) -> ClusteredSample:
    """Read a long-format CSV (header required) into a :class:`ClusteredSample`.

    Raises
    ------
    SchemaError
        A named column is absent from the header.
    ParseError
        An outcome/covariate cell is empty or non-numeric (message names the row).
    EmptyInputError
        The file has no header or no data rows.
    """
    if hasattr(path, "read"):
        return _read_rows(path, schema, delimiter)  # type: ignore[arg-type]
    with open(path, newline="", encoding="utf-8-sig") as handle:
        return _read_rows(handle, schema, delimiter)


def write_long_csv(
    sample: ClusteredSample,
    dest: str | os.PathLike | TextIO | None = None,
    delimiter: str = ",",
    cluster_col: str = "cluster",
) -> str | None:
    """Write ``sample`` in long format; returns the text when ``dest`` is None.

    An intercept column added at load time is not written, so loading the
    output with the same schema reproduces the sample exactly.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    x_keep = [k for k, name in enumerate(sample.x_names) if name != INTERCEPT]
    header = [cluster_col, *sample.y_names, *(sample.x_names[k] for k in x_keep)]
    if sample.censored is not None:
        header.append("censored")
    writer.writerow(header)
    for i in range(sample.n_obs):
        row = [sample.ids[sample.codes[i]], *(repr(float(v)) for v in sample.y[i])]
        if sample.x is not None:
            row.extend(repr(float(sample.x[i, k])) for k in x_keep)
        if sample.censored is not None:
            row.append("1" if sample.censored[i] else "0")
        writer.writerow(row)
    text = buf.getvalue()
    if dest is None:
        return text
    if hasattr(dest, "write"):
        dest.write(text)  # type: ignore[union-attr]
    else:
        with open(dest, "w", newline="", encoding="utf-8") as handle:
            handle.write(text)
    return None


# ---------------------------------------------------------------------------
# Descriptive informativeness check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SizeGroup:
    label: str
    sizes: tuple[int, ...]
    n_clusters: int
    n_obs: int
    mean: float
    ecdf: tuple[float, ...]


@dataclass(frozen=True)
class SizeDiagnostic:
    grid: tuple[float, ...]
    groups: tuple[SizeGroup, ...]
    size_constant: bool

    def as_rows(self) -> list[dict]:
        rows = []
        for g in self.groups:
            row = {
                "group": g.label,
                "sizes": " ".join(str(s) for s in g.sizes),
                "n_clusters": g.n_clusters,
                "n_obs": g.n_obs,
                "mean": g.mean,
            }
            for y, f in zip(self.grid, g.ecdf):
                row[f"F({y:.6g})"] = f
            rows.append(row)
        return rows


def informativeness_diagnostic(
    sample: ClusteredSample,
    grid: Sequence[float] | None = None,
    min_clusters: int = 2,
) -> SizeDiagnostic:
    """Outcome summaries by cluster size, for eyeballing informativeness.

    Sizes represented by fewer than ``min_clusters`` clusters are pooled into
    an ``"other"`` group.  Each group reports the cluster-weighted mean and
    the cluster-weighted ECDF on a common grid (default: the 10/25/50/75/90%
    cluster-weighted quantiles of the whole sample).  Nothing is tested.
    """
    from icsmarginal.functionals import quantile, weighted_ecdf

    y = sample.univariate()
    if grid is None:
        ecdf = weighted_ecdf(sample)
        grid = sorted({quantile(ecdf, a) for a in (0.1, 0.25, 0.5, 0.75, 0.9)})
    grid_arr = np.asarray(list(grid), dtype=float)

    cl_mean = sample.cluster_means(y)
    cl_ecdf = sample.cluster_means((y[:, None] <= grid_arr[None, :]).astype(float))
    counts = sample.size_distribution()
    frequent = sorted(s for s, c in counts.items() if c >= min_clusters)
    rare = sorted(s for s, c in counts.items() if c < min_clusters)

    groups = []
    buckets = [(str(s), [s]) for s in frequent]
    if rare:
        buckets.append(("other", rare))
    for label, sizes in buckets:
        mask = np.isin(sample.sizes, sizes)
        groups.append(
            SizeGroup(
                label=label,
                sizes=tuple(int(s) for s in sizes),
                n_clusters=int(mask.sum()),
                n_obs=int(sample.sizes[mask].sum()),
                mean=float(cl_mean[mask].mean()),
                ecdf=tuple(float(v) for v in cl_ecdf[mask].mean(axis=0)),
            )
        )
    return SizeDiagnostic(
        grid=tuple(float(g) for g in grid_arr),
        groups=tuple(groups),
        size_constant=len(counts) == 1,
    )
