"""Clearance sample generation, normalisation, and storage.

A sample is (x, y, theta, d): a robot configuration and its signed clearance
against a fixed map.  Samples are kept in columnar float64 arrays; the disk
format is little-endian float32 (magic ``LSBD``) with a plain-text stats
sidecar for the normalisation constants.

Target transform: clearance values can be arbitrarily close to a large
negative penetration, so a positive shift epsilon > |min d| is applied before
the log, and the log targets are standardised::

    dbar = (log(d + eps) - mu_log) / sigma_log

Inputs are standardised per feature with the training-set mean and standard
deviation.  Both transforms round-trip to 1e-9.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import ObstacleSet, RobotShape, clearance_many, wrap_angles

_MAGIC = b"LSBD"
_VERSION = 1

#: default safety margin added beyond |min d| when choosing epsilon
DEFAULT_EPS_MARGIN = 0.1


class DegenerateFeatureError(Exception):
    """An input feature or the log target has zero spread."""


class NonPositiveShiftedError(Exception):
    """epsilon fails to make every shifted clearance positive."""


class DatasetFormatError(Exception):
    """Corrupt or incompatible dataset file."""


@dataclass
class ClearanceSamples:
    """Columnar clearance samples: configurations (n, 3) and targets (n,)."""

    xytheta: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.xytheta = np.ascontiguousarray(self.xytheta, dtype=float)
        self.d = np.ascontiguousarray(self.d, dtype=float)
        if self.xytheta.ndim != 2 or self.xytheta.shape[1] != 3:
            raise ValueError("xytheta must be (n, 3)")
        if self.d.shape != (self.xytheta.shape[0],):
            raise ValueError("d must be (n,)")

    def __len__(self) -> int:
        return self.xytheta.shape[0]

    def take(self, idx: np.ndarray) -> "ClearanceSamples":
        return ClearanceSamples(self.xytheta[idx], self.d[idx])


@dataclass(frozen=True)
class NormStats:
    """Normalisation constants fitted on a training set.

    mu_x / sigma_x: per-feature input mean and standard deviation (3,).
    mu_log / sigma_log: moments of log(d + epsilon).
    """

    mu_x: tuple[float, float, float]
    sigma_x: tuple[float, float, float]
    mu_log: float
    sigma_log: float
    epsilon: float


def theta_grid(n_theta: int) -> np.ndarray:
    """Uniform heading grid theta_j = -pi + 2 pi j / n, wrapped to (-pi, pi]."""
    if n_theta < 1:
        raise ValueError("n_theta must be >= 1")
    return wrap_angles(-math.pi + 2.0 * math.pi * np.arange(n_theta) / n_theta)


def _combine(locations: np.ndarray, thetas: np.ndarray, shape: RobotShape,
             obs: ObstacleSet) -> ClearanceSamples:
    """Location-major cross product of locations and headings, with labels."""
    n_loc = locations.shape[0]
    n_th = thetas.shape[0]
    xyt = np.empty((n_loc * n_th, 3))
    xyt[:, 0] = np.repeat(locations[:, 0], n_th)
    xyt[:, 1] = np.repeat(locations[:, 1], n_th)
    xyt[:, 2] = np.tile(thetas, n_loc)
    d = clearance_many(shape, xyt, obs)
    return ClearanceSamples(xyt, d)


def generate(shape: RobotShape, obs: ObstacleSet, n_locations: int,
             n_theta: int, seed: int) -> ClearanceSamples:
    """Labelled samples at uniform-random locations times a heading grid.

    Locations are drawn uniformly over the world bounds (penetrating
    configurations are kept; the log shift absorbs them).  Ordering is
    deterministic: location index major, heading index minor.
    """
    if n_locations < 1:
        raise ValueError("n_locations must be >= 1")
    rng = np.random.default_rng(seed)
    wb = obs.world_bounds
    locations = np.column_stack([
        rng.uniform(wb[0], wb[1], size=n_locations),
        rng.uniform(wb[2], wb[3], size=n_locations),
    ])
    return _combine(locations, theta_grid(n_theta), shape, obs)


def generate_grid(shape: RobotShape, obs: ObstacleSet, nx: int, ny: int,
                  n_theta: int) -> ClearanceSamples:
    """Labelled samples at cell centers of an nx-by-ny location grid.

    Used for evaluation heat maps; same ordering rules as :func:`generate`.
    """
    wb = obs.world_bounds
    xs = wb[0] + (wb[1] - wb[0]) * (np.arange(nx) + 0.5) / nx
    ys = wb[2] + (wb[3] - wb[2]) * (np.arange(ny) + 0.5) / ny
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    locations = np.column_stack([gx.ravel(), gy.ravel()])
    return _combine(locations, theta_grid(n_theta), shape, obs)


def fit_norm_stats(samples: ClearanceSamples,
                   margin: float = DEFAULT_EPS_MARGIN,
                   epsilon: float | None = None) -> NormStats:
    """Fit input and log-target normalisation constants on a training set.

    epsilon defaults to |min d| + margin (margin also guards the all-positive
    case).  Population (biased) standard deviations are used throughout.
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to fit statistics")
    d = samples.d
    if epsilon is None:
        epsilon = float(max(0.0, -d.min()) + margin)
    shifted = d + epsilon
    if shifted.min() <= 0.0:
        raise NonPositiveShiftedError(
            f"epsilon {epsilon:.6g} leaves min(d + eps) = {shifted.min():.6g}")
    logs = np.log(shifted)
    mu_x = samples.xytheta.mean(axis=0)
    sigma_x = samples.xytheta.std(axis=0)
    mu_log = float(logs.mean())
    sigma_log = float(logs.std())
    if (sigma_x <= 0.0).any() or sigma_log <= 0.0:
        raise DegenerateFeatureError(
            f"zero spread: sigma_x={sigma_x}, sigma_log={sigma_log:.6g}")
    return NormStats(mu_x=tuple(float(v) for v in mu_x),
                     sigma_x=tuple(float(v) for v in sigma_x),
                     mu_log=mu_log, sigma_log=sigma_log,
                     epsilon=float(epsilon))


def normalize_inputs(xytheta: np.ndarray, stats: NormStats) -> np.ndarray:
    """Standardise configurations feature-wise."""
    mu = np.asarray(stats.mu_x)
    sd = np.asarray(stats.sigma_x)
    return (np.asarray(xytheta, dtype=float) - mu) / sd


def normalize_target(d, stats: NormStats):
    """Shifted-log standardisation of clearance values.

    Raises :class:`NonPositiveShiftedError` if any d + epsilon <= 0.
    """
    d = np.asarray(d, dtype=float)
    shifted = d + stats.epsilon
    if np.any(shifted <= 0.0):
        raise NonPositiveShiftedError(
            f"value below -epsilon ({-stats.epsilon:.6g})")
    out = (np.log(shifted) - stats.mu_log) / stats.sigma_log
    return out if out.ndim else float(out)


def denormalize(nd, stats: NormStats):
    """Inverse of :func:`normalize_target`: metric clearance from net output."""
    nd = np.asarray(nd, dtype=float)
    out = np.exp(nd * stats.sigma_log + stats.mu_log) - stats.epsilon
    return out if out.ndim else float(out)


def split(samples: ClearanceSamples, frac: float,
          seed: int) -> tuple[ClearanceSamples, ClearanceSamples]:
    """Seeded shuffle split: first floor(n * frac) permuted rows, then the rest."""
    if not 0.0 < frac < 1.0:
        raise ValueError("frac must be in (0, 1)")
    n = len(samples)
    perm = np.random.default_rng(seed).permutation(n)
    k = int(math.floor(n * frac))
    return samples.take(perm[:k]), samples.take(perm[k:])


def audit(samples: ClearanceSamples, shape: RobotShape, obs: ObstacleSet,
          frac: float = 0.01, seed: int = 0) -> int:
    """Recompute a random fraction of labels and compare at float32 precision.

    Returns the number of mismatches (0 on a healthy dataset: generation and
    recomputation share one code path, and storage rounds to float32).
    """
    n = len(samples)
    k = max(1, int(round(n * frac)))
    idx = np.random.default_rng(seed).choice(n, size=min(k, n), replace=False)
    fresh = clearance_many(shape, samples.xytheta[idx], obs)
    stored = samples.d[idx]
    return int(np.sum(np.float32(fresh) != np.float32(stored)))


# ---------------------------------------------------------------------------
# storage

def save(path, samples: ClearanceSamples) -> None:
    """Write magic, version, count, then count * (x, y, theta, d) float32."""
    rows = np.empty((len(samples), 4), dtype="<f4")
    rows[:, :3] = samples.xytheta
    rows[:, 3] = samples.d
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(samples)))
        rows.tofile(fh)


def load(path) -> ClearanceSamples:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DatasetFormatError(f"bad magic {magic!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise DatasetFormatError("truncated header")
        version, count = struct.unpack("<IQ", header)
        if version != _VERSION:
            raise DatasetFormatError(f"unsupported version {version}")
        rows = np.fromfile(fh, dtype="<f4", count=count * 4)
    if rows.size != count * 4:
        raise DatasetFormatError(
            f"expected {count} samples, file holds {rows.size // 4}")
    rows = rows.reshape(count, 4).astype(float)
    return ClearanceSamples(rows[:, :3], rows[:, 3])


def save_stats(path, stats: NormStats) -> None:
    """Plain-text sidecar; full-precision reprs so round-trips are exact."""
    lines = [
        "mu_x " + " ".join(repr(v) for v in stats.mu_x),
        "sigma_x " + " ".join(repr(v) for v in stats.sigma_x),
        "mu_log " + repr(stats.mu_log),
        "sigma_log " + repr(stats.sigma_log),
        "epsilon " + repr(stats.epsilon),
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_stats(path) -> NormStats:
    fields: dict[str, list[float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            tok = raw.split()
            if not tok:
                continue
            try:
                fields[tok[0]] = [float(v) for v in tok[1:]]
            except ValueError:
                raise DatasetFormatError(f"bad stats line {raw!r}") from None
    try:
        return NormStats(mu_x=tuple(fields["mu_x"]),
                         sigma_x=tuple(fields["sigma_x"]),
                         mu_log=fields["mu_log"][0],
                         sigma_log=fields["sigma_log"][0],
                         epsilon=fields["epsilon"][0])
    except (KeyError, IndexError):
        raise DatasetFormatError("stats sidecar missing fields") from None
