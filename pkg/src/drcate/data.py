"""Observations, covariate selection and parametric design matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .exceptions import InputError


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Outcome ``y``, binary treatment ``d``, covariates ``z`` and the columns of
    ``z`` that form the low-dimensional conditioning variable X.

    Arrays are copied and made read-only, so a Dataset can be shared freely
    between workers.
    """

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    x_cols: tuple = (0,)
    names: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if y.ndim != 1 or z.ndim != 2:
            raise InputError("y must be a vector and z a matrix")
        n = y.shape[0]
        if n < 1:
            raise InputError("empty dataset")
        d_raw = np.asarray(self.d)
        if d_raw.shape != (n,) or z.shape[0] != n:
            raise InputError(
                f"row counts differ: y={n}, d={d_raw.shape[0] if d_raw.ndim else 0}, z={z.shape[0]}"
            )
        d = np.asarray(d_raw, dtype=float)
        if not np.all((d == 0.0) | (d == 1.0)):
            bad = d[~((d == 0.0) | (d == 1.0))][0]
            raise InputError(f"invalid treatment value {bad!r}; expected 0 or 1")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise InputError("non-finite value in outcome or covariates")
        x_cols = tuple(int(c) for c in np.atleast_1d(self.x_cols))
        p = z.shape[1]
        if not 1 <= len(x_cols) <= 3:
            raise InputError("between 1 and 3 conditioning columns are supported")
        if len(set(x_cols)) != len(x_cols):
            raise InputError(f"duplicated conditioning columns {x_cols}")
        if any(c < 0 or c >= p for c in x_cols):
            raise InputError(f"conditioning column index out of range [0, {p})")
        if self.names is not None and len(self.names) != p:
            raise InputError("covariate names do not match the number of columns")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "d", _frozen(d))
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "x_cols", x_cols)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def dim_x(self) -> int:
        return len(self.x_cols)

    @property
    def x(self) -> np.ndarray:
        """Conditioning covariates, shape ``(n, dim_x)``."""
        return self.z[:, list(self.x_cols)]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.d[rows], self.z[rows], self.x_cols, self.names)


@dataclass(frozen=True)
class DesignSpec:
    """Parametric design built from columns of Z.

    Columns come out as ``[intercept?, base..., squares..., interactions...]``.
    """

    base_cols: tuple = ()
    add_intercept: bool = True
    squares: tuple = ()
    interactions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "base_cols", tuple(int(c) for c in self.base_cols))
        object.__setattr__(self, "squares", tuple(int(c) for c in self.squares))
        pairs = tuple(tuple(sorted((int(a), int(b)))) for a, b in self.interactions)
        object.__setattr__(self, "interactions", pairs)
        terms = (
            [("base", c) for c in self.base_cols]
            + [("sq", c) for c in self.squares]
            + [("int", pr) for pr in self.interactions]
        )
        if len(set(terms)) != len(terms):
            raise InputError("design specification repeats a column")
        for a, b in self.interactions:
            if a == b:
                raise InputError(f"interaction ({a}, {b}) duplicates a square term")
        if not self.add_intercept and not terms:
            raise InputError("empty design")

    @property
    def width(self) -> int:
        return (
            int(self.add_intercept)
            + len(self.base_cols)
            + len(self.squares)
            + len(self.interactions)
        )

    def max_index(self) -> int:
        idx = list(self.base_cols) + list(self.squares)
        idx += [c for pr in self.interactions for c in pr]
        return max(idx, default=-1)

    @classmethod
    def linear(cls, cols: Sequence[int]) -> "DesignSpec":
        return cls(base_cols=tuple(cols))


def build_design(data, spec: DesignSpec) -> np.ndarray:
    """Expand ``spec`` against the covariates of ``data`` (a Dataset or a raw
    ``(n, p)`` matrix)."""
    z = data.z if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, float))
    p = z.shape[1]
    if spec.max_index() >= p:
        raise InputError(f"design references column {spec.max_index()} of a {p}-column Z")
    cols = []
    if spec.add_intercept:
        cols.append(np.ones(z.shape[0]))
    cols.extend(z[:, c] for c in spec.base_cols)
    cols.extend(z[:, c] ** 2 for c in spec.squares)
    cols.extend(z[:, a] * z[:, b] for a, b in spec.interactions)
    return np.column_stack(cols)


def load_csv(
    path,
    outcome: str,
    treatment: str,
    covariates: Sequence[str],
    x_cols: Sequence[str],
) -> Dataset:
    """Read a headed CSV into a validated :class:`Dataset`.

    Rows with missing cells are rejected rather than dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise InputError(f"empty file: {path}") from None
    if frame.shape[0] == 0:
        raise InputError(f"empty file: {path}")
    covariates = list(covariates)
    missing = [c for c in [outcome, treatment, *covariates] if c not in frame.columns]
    if missing:
        raise InputError(f"missing column(s): {', '.join(missing)}")
    unknown = [c for c in x_cols if c not in covariates]
    if unknown:
        raise InputError(f"x column(s) not among the covariates: {', '.join(unknown)}")

    def numeric(col):
        vals = pd.to_numeric(frame[col], errors="coerce")
        bad = vals.isna() & frame[col].notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise InputError(f"non-numeric cell in column {col!r} at row {row}")
        out = vals.to_numpy(dtype=float)
        if not np.all(np.isfinite(out)):
            raise InputError(f"non-finite value in column {col!r}")
        return out

    y = numeric(outcome)
    d = numeric(treatment)
    z = np.column_stack([numeric(c) for c in covariates])
    return Dataset(
        y=y,
        d=d,
        z=z,
        x_cols=tuple(covariates.index(c) for c in x_cols),
        names=tuple(covariates),
    )
