"""Angular bandwidth of neighbour densities and body-frame energy spectra.

A neighbour density around a centre atom is the shell-weighted sum of
directional deltas, ``c_lm = sum_j g(r_j) Y_l^m(r_j / |r_j|)``.  Its per-degree
power fractions ``w(l)`` give the bandwidth ``lstar``, the smallest degree
whose cumulative fraction reaches a threshold.
"""
import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_degree, check_positions
from .injector import Configuration, body_frame, canonical_direction
from .metrics import resample_indices
from .sphharm import L_MAX_SUPPORTED, SHVector, degree_of_index, solid_harmonics

logger = logging.getLogger(__name__)

DEFAULT_R_CUT = 5.0  # Angstrom
DEFAULT_SHELL_MU = 2.5
DEFAULT_SHELL_SIGMA = 1.0
DEFAULT_L_MAX = 10
DEFAULT_THRESHOLD = 0.95
SPECTRUM_RIDGE = 1e-8
ZERO_POWER = "zero-power"
_CUM_TOL = 1e-12


class EmptyNeighborhoodWarning(UserWarning):
    pass


def shell_weight(r, mu=DEFAULT_SHELL_MU, sigma=DEFAULT_SHELL_SIGMA):
    return np.exp(-((r - mu) ** 2) / (2.0 * sigma**2))


def _neighbors(positions, center, r_cut, mask):
    pos = check_positions(positions)
    if not 0 <= center < pos.shape[0]:
        raise IndexError(f"center {center} out of range for {pos.shape[0]} atoms")
    rel = pos - pos[center]
    r = np.linalg.norm(rel, axis=1)
    keep = (r <= r_cut) & (r > 0)
    keep[center] = False
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    return rel[keep], r[keep]


def neighbor_density_coeffs(positions, center, r_cut=DEFAULT_R_CUT, shell_mu=DEFAULT_SHELL_MU,
                            shell_sigma=DEFAULT_SHELL_SIGMA, L_max=DEFAULT_L_MAX, mask=None):
    """SH coefficients of the shell-weighted neighbour density of atom ``center``.

    ``mask`` optionally restricts which atoms count as neighbours.  An empty
    ball returns the zero vector and emits ``EmptyNeighborhoodWarning``.
    """
    if not r_cut > 0:
        raise ValueError("r_cut must be positive")
    if not shell_sigma > 0:
        raise ValueError("shell_sigma must be positive")
    check_degree(L_max, L_MAX_SUPPORTED, "L_max")
    rel, r = _neighbors(positions, center, r_cut, mask)
    if r.size == 0:
        warnings.warn(f"no neighbours of atom {center} within {r_cut}", EmptyNeighborhoodWarning, stacklevel=2)
        return SHVector.zeros(L_max)
    Y = solid_harmonics(L_max, rel / r[:, None])
    return SHVector(L_max, shell_weight(r, shell_mu, shell_sigma) @ Y)


def bandwidth_lstar(coeffs, threshold=DEFAULT_THRESHOLD):
    """``(w, lstar)`` with ``w(l) = |c_l|^2 / |c|^2``.

    A zero density gives ``w = 0`` and ``lstar = None``.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    power = coeffs.degree_power()
    total = power.sum()
    if not total > 0:
        return np.zeros_like(power), None
    w = power / total
    cum = np.cumsum(w)
    return w, int(np.argmax(cum >= threshold - _CUM_TOL))


@dataclass(frozen=True)
class BandwidthProfile:
    w: np.ndarray
    lstar: Optional[int]
    n_neighbors: int
    center: int = 0
    group: int = 0

    @property
    def undefined(self):
        return ZERO_POWER if self.lstar is None else None


def atom_profile(positions, center, r_cut=DEFAULT_R_CUT, shell_mu=DEFAULT_SHELL_MU,
                 shell_sigma=DEFAULT_SHELL_SIGMA, L_max=DEFAULT_L_MAX, threshold=DEFAULT_THRESHOLD,
                 mask=None, group=0):
    n = _neighbors(positions, center, r_cut, mask)[1].size
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyNeighborhoodWarning)
        c = neighbor_density_coeffs(positions, center, r_cut, shell_mu, shell_sigma, L_max, mask)
    w, lstar = bandwidth_lstar(c, threshold)
    return BandwidthProfile(w, lstar, n, center, group)


@dataclass(frozen=True)
class BandwidthParams:
    r_cut: float = DEFAULT_R_CUT
    shell_mu: float = DEFAULT_SHELL_MU
    shell_sigma: float = DEFAULT_SHELL_SIGMA
    L_max: int = DEFAULT_L_MAX
    threshold: float = DEFAULT_THRESHOLD
    cutoff_l: int = 4
    B: int = 10_000
    rng_seed: int = 42
    atom_filter: Optional[Callable[[str], bool]] = None

    def to_dict(self):
        return {"r_cut": self.r_cut, "shell_mu": self.shell_mu, "shell_sigma": self.shell_sigma,
                "L_max": self.L_max, "threshold": self.threshold, "cutoff_l": self.cutoff_l,
                "B": self.B, "rng_seed": self.rng_seed}


def heavy_atom(symbol):
    """Example predicate: everything except hydrogen isotopes."""
    return symbol not in ("H", "D", "T")


@dataclass
class BandwidthSummary:
    median_lstar: Optional[float]
    p_le_cutoff: Optional[float]
    median_ci: tuple
    p_ci: tuple
    histogram: dict
    n_atoms: int
    n_groups: int
    n_undefined: int
    n_empty: int
    params: dict = field(default_factory=dict)
    profiles: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {"median_lstar": self.median_lstar, "p_le_cutoff": self.p_le_cutoff,
                "median_ci": list(self.median_ci), "p_ci": list(self.p_ci),
                "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
                "n_atoms": self.n_atoms, "n_groups": self.n_groups,
                "n_undefined": self.n_undefined, "n_empty": self.n_empty, "params": self.params}


def _as_group(item):
    if isinstance(item, Configuration):
        return list(item.symbols), item.positions
    symbols, positions = item
    return list(symbols), check_positions(positions)


def _group_profiles(g, symbols, positions, params):
    mask = None
    if params.atom_filter is not None:
        mask = np.array([bool(params.atom_filter(s)) for s in symbols])
    centers = range(len(symbols)) if mask is None else np.flatnonzero(mask)
    return [atom_profile(positions, int(i), params.r_cut, params.shell_mu, params.shell_sigma,
                         params.L_max, params.threshold, mask, g) for i in centers]


def _ci(x):
    x = x[np.isfinite(x)]
    if x.size == 0:
        return (None, None)
    lo, hi = np.percentile(x, [2.5, 97.5])
    return (float(lo), float(hi))


def dataset_bandwidth(dataset, params=None, n_jobs=1):
    """Pool per-atom ``lstar`` over a dataset and bootstrap at the group level.

    ``dataset`` holds groups (molecules, chains); each is a ``Configuration``
    or a ``(symbols, positions)`` pair.  All atoms passing
    ``params.atom_filter`` act as centres and as neighbours.  Groups are
    resampled with replacement for the intervals on the median and on
    ``P(lstar <= cutoff_l)``.
    """
    params = params or BandwidthParams()
    groups = [_as_group(item) for item in dataset]
    if not groups:
        raise ValueError("empty dataset")
    per_group = Parallel(n_jobs=n_jobs)(
        delayed(_group_profiles)(g, s, p, params) for g, (s, p) in enumerate(groups))
    profiles = [p for grp in per_group for p in grp]
    n_empty = sum(p.n_neighbors == 0 for p in profiles)
    lstars = [[p.lstar for p in grp if p.lstar is not None] for grp in per_group]
    pooled = np.array([v for grp in lstars for v in grp], dtype=float)
    if n_empty:
        logger.warning("%d atom(s) had no neighbours inside %.3g", n_empty, params.r_cut)
    hist = {}
    for v in pooled.astype(int):
        hist[int(v)] = hist.get(int(v), 0) + 1
    median = float(np.median(pooled)) if pooled.size else None
    p_le = float(np.mean(pooled <= params.cutoff_l)) if pooled.size else None

    median_ci, p_ci = (None, None), (None, None)
    if len(groups) >= 2 and pooled.size:
        counts = np.array([len(v) for v in lstars])
        values = [np.array(v, dtype=float) for v in lstars]
        idx = resample_indices(len(groups), params.B, params.rng_seed)
        med, frac = np.full(params.B, np.nan), np.full(params.B, np.nan)
        for b, row in enumerate(idx):
            if counts[row].sum() == 0:
                continue
            x = np.concatenate([values[k] for k in row])
            med[b] = np.median(x)
            frac[b] = np.mean(x <= params.cutoff_l)
        median_ci, p_ci = _ci(med), _ci(frac)

    return BandwidthSummary(median, p_le, median_ci, p_ci, hist, len(profiles), len(groups),
                            sum(p.lstar is None for p in profiles), n_empty, params.to_dict(), profiles)


def write_profiles_csv(path, profiles):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        L = len(profiles[0].w) - 1 if profiles else 0
        out.writerow(["group", "center", "n_neighbors", "lstar", *[f"w{l}" for l in range(L + 1)]])
        for p in profiles:
            out.writerow([p.group, p.center, p.n_neighbors, "" if p.lstar is None else p.lstar,
                          *[f"{v:.10g}" for v in p.w]])


class BandwidthAnalyzer(TransformerMixin, BaseEstimator):
    """Per-atom ``w(l)`` rows for a single structure ``X`` of shape ``(N, 3)``.

    ``transform`` returns ``(N, L_max + 1)``; ``lstar_`` holds the matching
    bandwidths (``-1`` for zero-power atoms) after each call.
    """

    def __init__(self, r_cut=DEFAULT_R_CUT, shell_mu=DEFAULT_SHELL_MU, shell_sigma=DEFAULT_SHELL_SIGMA,
                 L_max=DEFAULT_L_MAX, threshold=DEFAULT_THRESHOLD):
        self.r_cut = r_cut
        self.shell_mu = shell_mu
        self.shell_sigma = shell_sigma
        self.L_max = L_max
        self.threshold = threshold

    def fit(self, X, y=None):
        check_positions(X)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        pos = check_positions(X)
        profs = [atom_profile(pos, i, self.r_cut, self.shell_mu, self.shell_sigma, self.L_max, self.threshold)
                 for i in range(pos.shape[0])]
        self.lstar_ = np.array([-1 if p.lstar is None else p.lstar for p in profs])
        return np.array([p.w for p in profs]).reshape(pos.shape[0], self.L_max + 1)


@dataclass(frozen=True)
class EnergySpectrum:
    power: np.ndarray
    frac_above_2: float
    frac_above_4: float
    peaks: tuple
    coeffs: np.ndarray
    ridge_used: bool = False
    n_frames: int = 0

    def to_dict(self):
        return {"power": self.power.tolist(), "frac_above_2": self.frac_above_2,
                "frac_above_4": self.frac_above_4,
                "peaks": [{"l": l, "share": s} for l, s in self.peaks],
                "ridge_used": self.ridge_used, "n_frames": self.n_frames}

    def row(self):
        peaks = ", ".join(f"l={l} ({100 * s:.0f}%)" for l, s in self.peaks)
        return f"{100 * self.frac_above_2:6.1f} {100 * self.frac_above_4:6.1f}  {peaks}"


def natural_energy_spectrum(dataset, frame, anchor, L_max=DEFAULT_L_MAX, center=False, ridge=SPECTRUM_RIDGE):
    """Regress frame energies on ``Y_{<=L_max}`` of the canonical anchor direction.

    ``frame`` is the atom triple of the body frame and ``anchor`` the atom
    whose centroid-relative direction is decomposed.  With ``center`` the mean
    energy is removed first, so the constant offset does not dominate the
    degree-0 power.  A rank-deficient design falls back to ridge ``ridge``.
    """
    check_degree(L_max, L_MAX_SUPPORTED, "L_max")
    if not dataset:
        raise ValueError("empty dataset")
    dirs = np.array([canonical_direction(c.positions, body_frame(c.positions, *frame), anchor) for c in dataset])
    y = np.array([c.energy for c in dataset], dtype=float)
    if center:
        y = y - y.mean()
    X = solid_harmonics(L_max, dirs)
    if len(dataset) < X.shape[1]:
        logger.warning("%d frames for %d regressors; the fit is underdetermined", len(dataset), X.shape[1])
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    ridge_used = rank < X.shape[1]
    if ridge_used:
        coef = np.linalg.solve(X.T @ X + ridge * np.eye(X.shape[1]), X.T @ y)
    deg = degree_of_index(L_max)
    power = np.bincount(deg, weights=coef**2, minlength=L_max + 1)
    total = power.sum()
    if total > 0:
        share = power / total
        above2, above4 = float(share[3:].sum()), float(share[5:].sum())
        top = np.argsort(-share, kind="stable")[:2]
        peaks = tuple((int(l), float(share[l])) for l in top if share[l] > 1e-12)
    else:
        above2 = above4 = 0.0
        peaks = ()
    return EnergySpectrum(power, above2, above4, peaks, coef, bool(ridge_used), len(dataset))


__all__ = [
    "BandwidthAnalyzer", "BandwidthParams", "BandwidthProfile", "BandwidthSummary",
    "EmptyNeighborhoodWarning", "EnergySpectrum", "atom_profile", "bandwidth_lstar",
    "dataset_bandwidth", "heavy_atom", "natural_energy_spectrum",
    "neighbor_density_coeffs", "shell_weight", "write_profiles_csv",
]
