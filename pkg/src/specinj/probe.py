"""Least-squares polynomial probes of SH features and the synthetic calibration grids."""
import logging
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_directions, random_directions
from .cgspan import evaluate_monomials, monomial_count, monomial_index_sets
from .exceptions import ResourceError
from .sphharm import L_MAX_SUPPORTED, SHVector, n_coeffs, solid_harmonics

logger = logging.getLogger(__name__)

MAX_PROBE_MONOMIALS = 200_000
DEFAULT_RIDGE = 1e-10
SVD_RCOND = 1e-12


def poly_features(phi, d):
    """All monomials of degree ``<= d`` in the entries of ``phi``, constant first.

    ``phi`` is an ``SHVector`` or an ``(n, F)`` array of feature rows.
    """
    single = isinstance(phi, SHVector)
    X = phi.coeffs[None, :] if single else np.atleast_2d(np.asarray(phi, dtype=float))
    if monomial_count(X.shape[1], d) > MAX_PROBE_MONOMIALS:
        raise ResourceError(f"degree-{d} monomials of {X.shape[1]} features exceed {MAX_PROBE_MONOMIALS}")
    out = evaluate_monomials(X, monomial_index_sets(X.shape[1], d))
    return out[0] if single else out


def _solve(Phi, y, ridge, solver):
    """Ridge least squares; returns ``(w, rank_deficient)``."""
    if solver == "svd":
        U, s, Vt = np.linalg.svd(Phi, full_matrices=False)
        keep = s > SVD_RCOND * s[0]
        s, U, Vt = s[keep], U[:, keep], Vt[keep]
        w = Vt.T @ ((s / (s * s + ridge)) * (U.T @ y))
        return w, keep.sum() < Phi.shape[1]
    if solver == "normal":
        A = Phi.T @ Phi + ridge * np.eye(Phi.shape[1])
        w = scipy.linalg.solve(A, Phi.T @ y, assume_a="pos")
        return w, np.linalg.matrix_rank(Phi) < Phi.shape[1]
    if solver == "qr":
        Q, R, piv = scipy.linalg.qr(Phi, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > SVD_RCOND * diag[0]))
        z = scipy.linalg.solve_triangular(R[:rank, :rank], Q[:, :rank].T @ y)
        w = np.zeros(Phi.shape[1])
        w[piv[:rank]] = z
        return w, rank < Phi.shape[1]
    raise ValueError(f"unknown solver {solver!r}")


class PolyProbe(RegressorMixin, BaseEstimator):
    """Degree-``d`` polynomial readout of the degree-``L`` SH features of a direction.

    ``X`` holds unit directions, shape ``(n, 3)``.  The fitted function lies in
    the span of all degree-``<= d`` monomials of ``phi_L(x)``.
    """

    def __init__(self, L=2, d=2, ridge=DEFAULT_RIDGE, solver="svd"):
        self.L = L
        self.d = d
        self.ridge = ridge
        self.solver = solver

    def _features(self, X):
        X = check_directions(X)
        return poly_features(solid_harmonics(self.L, X), self.d)

    def fit(self, X, y):
        if not 0 <= self.L <= L_MAX_SUPPORTED:
            raise ValueError(f"L must be in [0, {L_MAX_SUPPORTED}]")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        y = np.asarray(y, dtype=float).ravel()
        Phi = self._features(X)
        if Phi.shape[0] != y.size:
            raise ValueError("X and y disagree on sample count")
        self.coef_, self.rank_deficient_ = _solve(Phi, y, self.ridge, self.solver)
        if self.rank_deficient_ and self.ridge == 0:
            logger.info("rank-deficient design solved by minimum-norm pseudo-inverse")
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self._features(X) @ self.coef_


@dataclass(frozen=True)
class PolyProbeConfig:
    L: int
    d: int
    ridge: float = DEFAULT_RIDGE
    n: int = 4000

    def __post_init__(self):
        if monomial_count(n_coeffs(self.L), self.d) > MAX_PROBE_MONOMIALS:
            raise ResourceError(f"probe (L={self.L}, d={self.d}) exceeds the monomial guard")


@dataclass(frozen=True)
class ProbeResult:
    weights: np.ndarray
    r_squared: float
    mse: float
    cell: tuple
    target_var: float
    rank_deficient: bool = False

    def summary(self):
        L, d, ell = self.cell
        return {"L": L, "d": d, "l": ell, "r2": self.r_squared, "mse": self.mse, "target_var": self.target_var}


def r_squared(mse, y):
    """``1 - mse / var(y)``; a numerically constant ``y`` scores 1 only if fit exactly."""
    var = float(np.var(y))
    scale = float(np.mean(np.square(y))) + 1e-300
    if var <= 1e-20 * scale:
        return 1.0 if mse <= 1e-20 * scale else 0.0
    return 1.0 - mse / var


def fit_poly_probe(dirs, targets, cfg, ell=None, solver="svd"):
    """Fit on even-indexed samples, score R^2 and MSE on odd-indexed ones."""
    dirs = check_directions(dirs)
    y = np.asarray(targets, dtype=float).ravel()
    if y.size != dirs.shape[0]:
        raise ValueError("dirs and targets disagree on sample count")
    model = PolyProbe(cfg.L, cfg.d, cfg.ridge, solver).fit(dirs[0::2], y[0::2])
    resid = model.predict(dirs[1::2]) - y[1::2]
    mse = float(np.mean(resid**2))
    var = float(np.var(y[1::2]))
    return ProbeResult(model.coef_, r_squared(mse, y[1::2]), mse, (cfg.L, cfg.d, ell), var, model.rank_deficient_)


class SyntheticTarget:
    """Unit-norm pure-degree field ``sum_m c_m Y_l^m`` with seeded ``c``."""

    def __init__(self, l, coeff_seed):
        if not 0 <= l <= L_MAX_SUPPORTED:
            raise ValueError(f"l must be in [0, {L_MAX_SUPPORTED}]")
        self.l = l
        self.coeff_seed = coeff_seed
        c = np.random.Generator(np.random.Philox(coeff_seed)).standard_normal(2 * l + 1)
        self.coeffs = c / np.linalg.norm(c)

    def sh(self):
        out = np.zeros(n_coeffs(self.l))
        out[self.l**2:] = self.coeffs
        return SHVector(self.l, out)

    def __call__(self, dirs):
        dirs = check_directions(dirs)
        l = self.l
        return solid_harmonics(l, dirs)[:, l * l:] @ self.coeffs


def synth_target(l, coeff_seed):
    return SyntheticTarget(l, coeff_seed)


def _target_seed(seed, *tags):
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


@dataclass(frozen=True)
class GridCell:
    L: int
    d: int
    r2_at: float
    r2_above: float
    delta_r2: float
    results: tuple

    @property
    def ceiling(self):
        return self.L * self.d

    def row(self):
        return {"L": self.L, "d": self.d, "dL": self.ceiling,
                "r2_at": self.r2_at, "r2_above": self.r2_above, "delta_r2": self.delta_r2}

    def to_dict(self):
        out = self.row()
        out["fits"] = [r.summary() for r in self.results]
        return out


def _fit_cell_ell(L, d, ell, dirs, seed, ridge):
    target = synth_target(ell, _target_seed(seed, ell))
    return fit_poly_probe(dirs, target(dirs), PolyProbeConfig(L, d, ridge, dirs.shape[0]), ell=ell)


def saturation_grid(L_set=(1, 2, 3), d_set=(2, 3, 4), l_max_extra=3, n=4000, seed=0,
                    max_ceiling=9, l_floor=12, ridge=DEFAULT_RIDGE, n_jobs=1):
    """Probe every ``(L, d)`` cell with ``dL <= max_ceiling`` on pure-degree targets.

    Each cell sweeps ``l = 0 .. min(max(dL + l_max_extra, l_floor), L_MAX_SUPPORTED)``
    using the same ``n`` directions and the same per-``l`` targets.
    """
    cells = [(L, d) for L in L_set for d in d_set if L * d <= max_ceiling]
    for L, d in cells:
        PolyProbeConfig(L, d, ridge, n)
    dirs = random_directions(n, seed)
    jobs = []
    for L, d in cells:
        top = min(max(L * d + l_max_extra, l_floor), L_MAX_SUPPORTED)
        jobs.extend((L, d, ell) for ell in range(top + 1))
    results = Parallel(n_jobs=n_jobs)(
        delayed(_fit_cell_ell)(L, d, ell, dirs, seed, ridge) for L, d, ell in jobs)
    by_cell = {}
    for (L, d, ell), res in zip(jobs, results):
        by_cell.setdefault((L, d), []).append(res)
    out = []
    for (L, d), res in by_cell.items():
        r2 = {r.cell[2]: r.r_squared for r in res}
        at, above = r2[L * d], r2.get(L * d + 1, float("nan"))
        out.append(GridCell(L, d, at, above, at - above, tuple(res)))
    return out


def format_grid_table(cells):
    lines = [f"{'L':>2} {'d':>2} {'dL':>3} {'R2(l=dL)':>10} {'R2(l=dL+1)':>11} {'dR2':>7}"]
    for c in cells:
        lines.append(f"{c.L:>2} {c.d:>2} {c.ceiling:>3} {c.r2_at:>10.4f} {c.r2_above:>11.3f} {c.delta_r2:>7.3f}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class HardCeilingResult:
    mse_within: float
    mse_above: float
    var_within: float
    var_above: float

    def to_dict(self):
        return asdict(self)


def hard_ceiling_check(L, band=None, seed=0, n=4000):
    """Linear probe at degree ``L`` on a band-``<= band`` target and a pure ``L+1`` target."""
    band = L if band is None else band
    if not 0 <= band <= L <= L_MAX_SUPPORTED - 1:
        raise ValueError("need 0 <= band <= L < L_MAX_SUPPORTED")
    dirs = random_directions(n, seed)
    rng = np.random.Generator(np.random.Philox(_target_seed(seed, 1000, band)))
    c = rng.standard_normal(n_coeffs(band))
    within = SHVector(band, c / np.linalg.norm(c))
    y_within = solid_harmonics(band, dirs) @ within.coeffs
    y_above = synth_target(L + 1, _target_seed(seed, L + 1))(dirs)
    cfg = PolyProbeConfig(L, 1, DEFAULT_RIDGE, n)
    a = fit_poly_probe(dirs, y_within, cfg, ell=band)
    b = fit_poly_probe(dirs, y_above, cfg, ell=L + 1)
    return HardCeilingResult(a.mse, b.mse, a.target_var, b.target_var)
