"""Observation sets: synthetic generation, CSV ingestion, splits, noise.

An :class:`ObservationSet` holds N scattered records (continuous index
tuple, timestamp, value), all coordinates min-max normalized to [0, 1],
together with per-mode sorted unique-index tables, the sorted unique
timestamp table, precomputed lookup positions into those tables, and the
affine normalization metadata needed to map predictions back to original
units. Arrays are frozen (read-only) after construction.

The synthetic task is a two-mode temporal tensor whose single underlying
component is the product of a cubed-cosine wave in (i1, t) and a sine wave
in (i2, t); observations sit on a random off-grid lattice.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class CsvFormatError(ValueError):
    """Malformed CSV input (message carries the offending line number)."""


class NormalizationError(ValueError):
    """A coordinate column is constant and cannot be min-max normalized."""


@dataclass(frozen=True)
class NormInfo:
    """Affine per-column normalization: x_norm = (x - lo) / (hi - lo)."""

    index_lo: np.ndarray
    index_hi: np.ndarray
    time_lo: float
    time_hi: float

    @classmethod
    def identity(cls, n_modes: int) -> "NormInfo":
        return cls(np.zeros(n_modes), np.ones(n_modes), 0.0, 1.0)

    def normalize(self, indexes: np.ndarray, times: np.ndarray):
        span = self.index_hi - self.index_lo
        return (indexes - self.index_lo) / span, \
            (times - self.time_lo) / (self.time_hi - self.time_lo)

    def denormalize(self, indexes: np.ndarray, times: np.ndarray):
        return indexes * (self.index_hi - self.index_lo) + self.index_lo, \
            times * (self.time_hi - self.time_lo) + self.time_lo


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class ObservationSet:
    """Immutable batch of (index tuple, timestamp, value) records."""

    def __init__(self, indexes, times, values, clean=None,
                 norm: NormInfo | None = None):
        indexes = np.atleast_2d(np.asarray(indexes, dtype=np.float64))
        times = np.asarray(times, dtype=np.float64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        n = indexes.shape[0]
        if n < 1:
            raise ValueError("ObservationSet needs at least one record")
        if times.shape != (n,) or values.shape != (n,):
            raise ValueError("indexes/times/values lengths disagree")
        if not (np.all(np.isfinite(indexes)) and np.all(np.isfinite(times))
                and np.all(np.isfinite(values))):
            raise ValueError("observations must be finite")

        self.indexes = _frozen(indexes)
        self.times = _frozen(times)
        self.values = _frozen(values)
        self.clean = None if clean is None else _frozen(np.asarray(clean).ravel())
        if self.clean is not None and self.clean.shape != (n,):
            raise ValueError("clean values length disagrees")
        self.norm = norm if norm is not None else NormInfo.identity(indexes.shape[1])

        self.index_tables = [_frozen(np.unique(indexes[:, k]))
                             for k in range(indexes.shape[1])]
        self.time_table = _frozen(np.unique(times))
        self.index_positions = [
            np.searchsorted(tab, indexes[:, k])
            for k, tab in enumerate(self.index_tables)
        ]
        for pos in self.index_positions:
            pos.setflags(write=False)
        self.time_positions = np.searchsorted(self.time_table, times)
        self.time_positions.setflags(write=False)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def n_modes(self) -> int:
        return self.indexes.shape[1]

    def subset(self, rows: np.ndarray) -> "ObservationSet":
        clean = None if self.clean is None else self.clean[rows]
        return ObservationSet(self.indexes[rows], self.times[rows],
                              self.values[rows], clean=clean, norm=self.norm)


@dataclass(frozen=True)
class SplitSpec:
    """Seeded random split, or a temporal holdout when cutoff is set."""

    train_fraction: float = 0.8
    seed: int = 0
    time_cutoff: float | None = None

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


def synthetic_truth(i1, i2, t):
    """Clean entry value of the synthetic two-mode temporal tensor."""
    u1 = -np.cos(2.0 * np.pi * t + 2.5 * np.pi * np.asarray(i1)) ** 3
    u2 = np.sin(3.0 * np.pi * t + 3.5 * np.pi * np.asarray(i2))
    return u1 * u2


def gen_synthetic(n1: int = 25, n2: int = 25, nt: int = 50,
                  noise_variance: float = 0.05, seed: int = 0,
                  lattice_jitter: bool = False) -> ObservationSet:
    """Random off-grid lattice of n1 x n2 x nt observations on [0, 1]^3.

    Coordinates per mode are uniform random draws by default; with
    ``lattice_jitter`` they are jittered regular-grid cells instead (the
    geometry used for scalability sweeps). Returns the noisy set with the
    clean values attached.
    """
    if min(n1, n2, nt) < 1:
        raise ValueError("lattice dims must be >= 1")
    if noise_variance < 0.0:
        raise ValueError("noise variance must be >= 0")
    rng = np.random.default_rng(seed)

    def draw(n):
        if lattice_jitter:
            return np.sort((np.arange(n) + rng.uniform(0.0, 1.0, size=n)) / n)
        return np.sort(rng.uniform(0.0, 1.0, size=n))

    i1, i2, ts = draw(n1), draw(n2), draw(nt)
    g1, g2, gt = np.meshgrid(i1, i2, ts, indexing="ij")
    indexes = np.column_stack([g1.ravel(), g2.ravel()])
    times = gt.ravel()
    clean = synthetic_truth(indexes[:, 0], indexes[:, 1], times)
    noise = rng.normal(0.0, np.sqrt(noise_variance), size=clean.shape) \
        if noise_variance > 0.0 else 0.0
    return ObservationSet(indexes, times, clean + noise, clean=clean,
                          norm=NormInfo.identity(2))


def load_csv(path) -> ObservationSet:
    """Read ``i_1,...,i_K,t,y[,y_clean]`` and min-max normalize coordinates."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_clean = header and header[-1] == "y_clean"
        body = header[:-1] if has_clean else header
        if len(body) < 3 or body[-1] != "y" or body[-2] != "t" or \
                any(not h.startswith("i_") for h in body[:-2]):
            raise CsvFormatError(f"{path}: expected header i_1,...,i_K,t,y")
        k = len(body) - 2
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(v) for v in rec])
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    raw_idx, raw_t, y = arr[:, :k], arr[:, k], arr[:, k + 1]
    clean = arr[:, k + 2] if has_clean else None

    lo, hi = raw_idx.min(axis=0), raw_idx.max(axis=0)
    for col in range(k):
        if hi[col] == lo[col]:
            raise NormalizationError(f"{path}: index column i_{col + 1} is constant")
    tlo, thi = raw_t.min(), raw_t.max()
    if thi == tlo:
        raise NormalizationError(f"{path}: time column is constant")
    norm = NormInfo(lo, hi, float(tlo), float(thi))
    idx, t = norm.normalize(raw_idx, raw_t)
    return ObservationSet(idx, t, y, clean=clean, norm=norm)


def save_csv(obs: ObservationSet, path, with_clean: bool = False) -> None:
    """Write observations back in original (denormalized) units."""
    raw_idx, raw_t = obs.norm.denormalize(obs.indexes, obs.times)
    with_clean = with_clean and obs.clean is not None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"i_{k + 1}" for k in range(obs.n_modes)] + ["t", "y"]
        if with_clean:
            header.append("y_clean")
        writer.writerow(header)
        for n in range(obs.n):
            row = [repr(float(v)) for v in raw_idx[n]] \
                + [repr(float(raw_t[n])), repr(float(obs.values[n]))]
            if with_clean:
                row.append(repr(float(obs.clean[n])))
            writer.writerow(row)


def split(obs: ObservationSet, spec: SplitSpec):
    """Disjoint (train, test) whose union is the input set."""
    if obs.n < 2:
        raise ValueError("need at least 2 observations to split")
    if spec.time_cutoff is not None:
        train_rows = np.flatnonzero(obs.times <= spec.time_cutoff)
        test_rows = np.flatnonzero(obs.times > spec.time_cutoff)
    else:
        order = np.random.default_rng(spec.seed).permutation(obs.n)
        n_train = int(round(spec.train_fraction * obs.n))
        train_rows, test_rows = np.sort(order[:n_train]), np.sort(order[n_train:])
    if train_rows.size == 0 or test_rows.size == 0:
        raise ValueError("degenerate split: one side is empty")
    return obs.subset(train_rows), obs.subset(test_rows)


NOISE_LAWS = ("gaussian", "laplacian", "poisson")


def add_noise(obs: ObservationSet, law: str, variance: float,
              seed: int = 0) -> ObservationSet:
    """Perturb values with one of the study's noise laws at a target variance.

    Poisson noise on real-valued entries is realized as variance-matched
    centered shot noise: (Poisson(1) - 1) * sqrt(variance).
    """
    if law not in NOISE_LAWS:
        raise ValueError(f"unknown noise law {law!r}; choose from {NOISE_LAWS}")
    if variance < 0.0:
        raise ValueError("variance must be >= 0")
    if variance == 0.0:
        return obs
    rng = np.random.default_rng(seed)
    if law == "gaussian":
        eps = rng.normal(0.0, np.sqrt(variance), size=obs.n)
    elif law == "laplacian":
        eps = rng.laplace(0.0, np.sqrt(variance / 2.0), size=obs.n)
    else:
        eps = (rng.poisson(1.0, size=obs.n) - 1.0) * np.sqrt(variance)
    return ObservationSet(obs.indexes, obs.times, obs.values + eps,
                          clean=obs.clean, norm=obs.norm)
