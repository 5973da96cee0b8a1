"""Recovery fraction, sharpness, injected-residual R^2 and bootstrap intervals."""
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

UNDEFINED_DENOMINATOR = "non-positive denominator"


@dataclass(frozen=True)
class NormalizedError:
    y: float
    mae: float
    sigma_f: float


def force_mae(pred, true):
    """Per-component force MAE, ``sum |F_pred - F_true| / (3 N)`` averaged over frames.

    Inputs are ``(N, 3)`` for one frame or ``(frames, N, 3)``.
    """
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    if pred.ndim == 2:
        pred, true = pred[None], true[None]
    per_frame = np.abs(pred - true).reshape(pred.shape[0], -1).mean(axis=1)
    return float(per_frame.mean())


def normalized_error(force_mae, sigma_f):
    if not sigma_f > 0:
        raise ValueError(f"sigma_f must be positive, got {sigma_f}")
    return NormalizedError(force_mae / sigma_f, float(force_mae), float(sigma_f))


def recovery_fraction(y_low, y_arch, y_high):
    """Share of the ``y_low - y_high`` gap closed by the probed architecture.

    ``None`` when the anchors have no strict gap; callers then report the raw
    gain ``y_low - y_arch``.
    """
    denom = y_low - y_high
    if not denom > 0:
        return None
    return (y_low - y_arch) / denom


def raw_gain(y_low, y_arch):
    return y_low - y_arch


class Sharpness(NamedTuple):
    value: Optional[float]
    method: str  # "ratio", "lower_bound", "delta_fallback" or "undefined"


def sharpness(rho_at, rho_above, ci_at=None, ci_above=None, delta_at=None, delta_above=None):
    """Cliff sharpness ``rho(dL) / rho(dL+1)``.

    If ``rho_above``'s interval covers zero the result is the finite-sample
    lower bound ``ci_at[0] / ci_above[1]``.  If either recovery fraction is
    undefined the raw-gain ratio ``delta_at / delta_above`` is used.
    """
    if rho_at is None or rho_above is None:
        if delta_at is not None and delta_above is not None and delta_above > 0:
            return Sharpness(delta_at / delta_above, "delta_fallback")
        return Sharpness(None, "undefined")
    if ci_above is not None and ci_above[0] <= 0:
        lo_at = ci_at[0] if ci_at is not None else rho_at
        if ci_above[1] > 0:
            return Sharpness(lo_at / ci_above[1], "lower_bound")
        return Sharpness(None, "undefined")
    if rho_above > 0:
        return Sharpness(rho_at / rho_above, "ratio")
    return Sharpness(None, "undefined")


def _per_frame_sq(arr):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    return np.sum(arr.reshape(arr.shape[0], -1) ** 2, axis=1)


def r2_injected(delta_f_pred, f_inj):
    """``1 - <|dF_pred - F_inj|^2> / <|F_inj|^2>`` over frames."""
    dfp = np.asarray(delta_f_pred, dtype=float)
    fi = np.asarray(f_inj, dtype=float)
    if dfp.shape != fi.shape:
        raise ValueError(f"shape mismatch {dfp.shape} vs {fi.shape}")
    power = _per_frame_sq(fi).mean()
    if not power > 0:
        raise ValueError("injected force power is zero")
    return float(1.0 - _per_frame_sq(dfp - fi).mean() / power)


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


class BootstrapCI(NamedTuple):
    mean: float
    lo: float
    hi: float


def resample_indices(n, B=10_000, rng_seed=42):
    """``(B, n)`` indices drawn with replacement; the single source of bootstrap draws."""
    return _rng(rng_seed).integers(0, n, size=(B, n))


def bootstrap_distribution(values, B=10_000, rng_seed=42, stat=np.mean):
    values = np.asarray(values, dtype=float)
    return stat(values[resample_indices(values.size, B, rng_seed)], axis=1)


def bootstrap_mean_ci(values, B=10_000, rng_seed=42, level=0.95):
    """Percentile CI of the bootstrap distribution of the mean."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        raise ValueError("need at least two values")
    if B < 1000:
        raise ValueError("B must be at least 1000")
    dist = bootstrap_distribution(values, B, rng_seed)
    alpha = (1.0 - level) / 2
    lo, hi = np.percentile(dist, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapCI(float(values.mean()), float(lo), float(hi))


@dataclass(frozen=True)
class ClusterContrast:
    mean_at: float
    ci_at: tuple
    mean_above: float
    ci_above: tuple
    ratio: Optional[float]
    ratio_ci: tuple
    diff: float
    diff_ci: tuple
    n_excluded: int
    leave_one_out: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def leave_one_out_ratios(delta_at, delta_above):
    """Ratio of means after dropping each cluster in turn."""
    a = np.asarray(delta_at, dtype=float)
    b = np.asarray(delta_above, dtype=float)
    out = []
    for k in range(a.size):
        keep = np.arange(a.size) != k
        den = b[keep].mean()
        out.append(float(a[keep].mean() / den) if den > 0 else None)
    return out


def cluster_bootstrap_contrast(delta_at, delta_above, B=10_000, rng_seed=42, level=0.95):
    """Cluster bootstrap of ``mean(at) / mean(above)`` and ``mean(at) - mean(above)``.

    Entry ``k`` of both lists belongs to cluster ``k`` (e.g. one backbone);
    clusters are resampled with replacement as a unit.  Resamples whose
    ``mean(above) <= 0`` are dropped from the ratio and counted.
    """
    a = np.asarray(delta_at, dtype=float)
    b = np.asarray(delta_above, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two equal-length 1-D per-cluster lists")
    if a.size < 2:
        raise ValueError("need at least two clusters")
    idx = resample_indices(a.size, B, rng_seed)
    ma, mb = a[idx].mean(axis=1), b[idx].mean(axis=1)
    ok = mb > 0
    q = [100 * (1 - level) / 2, 100 * (1 + level) / 2]

    def ci(x):
        if x.size == 0:
            return (None, None)
        lo, hi = np.percentile(x, q)
        return (float(lo), float(hi))

    ratio = float(a.mean() / b.mean()) if b.mean() > 0 else None
    return ClusterContrast(
        mean_at=float(a.mean()),
        ci_at=ci(ma),
        mean_above=float(b.mean()),
        ci_above=ci(mb),
        ratio=ratio,
        ratio_ci=ci(ma[ok] / mb[ok]),
        diff=float(a.mean() - b.mean()),
        diff_ci=ci(ma - mb),
        n_excluded=int((~ok).sum()),
        leave_one_out=leave_one_out_ratios(a, b),
    )


@dataclass
class MetricReport:
    """One row of a diagnostic: ``rho`` is ``None`` exactly when ``undefined_reason`` is set."""

    ell: Optional[int] = None
    rho: Optional[float] = None
    delta: float = 0.0
    xi: Optional[float] = None
    xi_method: Optional[str] = None
    r2_inj: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    n_seeds: int = 1
    undefined_reason: Optional[str] = None

    def __post_init__(self):
        if (self.rho is None) != (self.undefined_reason is not None):
            raise ValueError("rho must be absent exactly when undefined_reason is given")

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return d


def seedwise_report(ell, y_low, y_arch, y_high, B=10_000, rng_seed=42):
    """Recovery fraction per seed, then the bootstrap mean and CI.

    ``y_*`` are equal-length per-seed arrays (or scalars broadcast to them).
    Seeds with no strict anchor gap are dropped; if all are dropped, ``rho`` is
    undefined and only the raw gain is reported.
    """
    y_low, y_arch, y_high = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float))
                                                  for v in (y_low, y_arch, y_high)))
    delta = float(np.mean(y_low - y_arch))
    rhos = [recovery_fraction(a, b, c) for a, b, c in zip(y_low, y_arch, y_high)]
    rhos = np.array([r for r in rhos if r is not None])
    n = int(y_low.size)
    if rhos.size == 0:
        return MetricReport(ell=ell, delta=delta, n_seeds=n, undefined_reason=UNDEFINED_DENOMINATOR)
    if rhos.size == 1:
        return MetricReport(ell=ell, rho=float(rhos[0]), delta=delta, n_seeds=n)
    ci = bootstrap_mean_ci(rhos, B, rng_seed)
    return MetricReport(ell=ell, rho=ci.mean, delta=delta, ci_low=ci.lo, ci_high=ci.hi, n_seeds=n)


def locate_cliff(reports, contrast=3.0, min_rho=0.1):
    """Largest ``ell`` with ``rho(ell) >= contrast * rho(ell + 1)``.

    Rows with undefined ``rho`` compare raw gains instead.  Returns
    ``(ell_star, Sharpness)`` or ``(None, None)`` when no cliff is found.
    """
    by_ell = {r.ell: r for r in reports}
    best = None
    for ell in sorted(by_ell):
        nxt = by_ell.get(ell + 1)
        if nxt is None:
            continue
        cur = by_ell[ell]
        if cur.rho is not None and nxt.rho is not None:
            hit = cur.rho >= min_rho and cur.rho >= contrast * max(nxt.rho, 0.0)
        else:
            hit = cur.delta > 0 and cur.delta >= contrast * max(nxt.delta, 0.0)
        if hit:
            best = ell
    if best is None:
        return None, None
    cur, nxt = by_ell[best], by_ell[best + 1]
    ci_at = (cur.ci_low, cur.ci_high) if cur.ci_low is not None else None
    ci_above = (nxt.ci_low, nxt.ci_high) if nxt.ci_low is not None else None
    return best, sharpness(cur.rho, nxt.rho, ci_at, ci_above, cur.delta, nxt.delta)
