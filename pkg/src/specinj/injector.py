"""Body-frame spectral injection of a single angular degree into a dataset.

Each configuration gets an extra energy ``alpha * sum_m c_m Y_l^m(n)`` where
``n`` is the centroid-relative direction of an anchor atom expressed in a
Gram-Schmidt frame built from three other atoms.  Forces are the exact
negative gradient of that term, differentiated through the centroid, the
frame and the normalization.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_positions, check_same_shape
from .exceptions import DegenerateAnchorError, DegenerateFrameError, GateError
from .sphharm import L_MAX_SUPPORTED, sh_direction_grad, solid_harmonics

logger = logging.getLogger(__name__)

FRAME_SIGMA_MIN = 1e-8  # Angstrom^2
ANCHOR_MIN_NORM = 1e-8  # Angstrom
LEAKAGE_GATE = 0.018
ETA_MIN = 0.20


@dataclass
class Configuration:
    """One frame: positions (A), energy (kcal/mol), forces (kcal/mol/A)."""

    positions: np.ndarray
    energy: float
    forces: np.ndarray
    symbols: list = field(default=None)

    def __post_init__(self):
        self.positions = check_positions(self.positions)
        self.forces = np.asarray(self.forces, dtype=float)
        if self.forces.shape != self.positions.shape:
            raise ValueError(f"forces shape {self.forces.shape} != positions shape {self.positions.shape}")
        self.energy = float(self.energy)
        if self.symbols is None:
            self.symbols = ["X"] * self.positions.shape[0]
        elif len(self.symbols) != self.positions.shape[0]:
            raise ValueError("symbols length does not match atom count")

    @property
    def n_atoms(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class InjectionSpec:
    """Parameters of one injection; ``coefficients`` derive from ``coeff_seed``.

    ``anchor_mode='edge'`` replaces the centroid-relative anchor with the
    frame edge ``r_i - r_j``; it exists as a control because that direction
    is constant in the body frame.
    """

    l_inj: int
    amplitude: float
    frame: tuple
    anchor: int
    coeff_seed: int = 0
    anchor_mode: str = "centroid"

    def __post_init__(self):
        if not 1 <= self.l_inj <= L_MAX_SUPPORTED:
            raise ValueError(f"l_inj must be in [1, {L_MAX_SUPPORTED}]")
        if len(self.frame) != 3 or len(set(self.frame)) != 3:
            raise ValueError("frame must be three distinct atom indices")
        if self.anchor_mode not in ("centroid", "edge"):
            raise ValueError(f"unknown anchor_mode {self.anchor_mode!r}")
        object.__setattr__(self, "frame", tuple(int(i) for i in self.frame))

    @property
    def coefficients(self):
        rng = np.random.Generator(np.random.Philox(self.coeff_seed))
        return rng.standard_normal(2 * self.l_inj + 1)

    def to_dict(self):
        return {
            "l_inj": self.l_inj,
            "amplitude": self.amplitude,
            "frame": list(self.frame),
            "anchor": self.anchor,
            "coeff_seed": self.coeff_seed,
            "anchor_mode": self.anchor_mode,
            "coefficients": self.coefficients.tolist(),
        }


@dataclass(frozen=True)
class FrameResult:
    R: np.ndarray
    sigma_min: float


def body_frame(positions, i, j, k):
    """Right-handed frame ``R = [e1 e2 e3]`` with ``e1 ~ r_i - r_j``."""
    pos = check_positions(positions, min_atoms=3)
    if len({i, j, k}) != 3:
        raise ValueError("frame atoms must be distinct")
    ri, rj, rk = pos[i], pos[j], pos[k]
    X = np.stack([rj - ri, rk - ri], axis=1)
    sigma_min = float(np.linalg.eigvalsh(X.T @ X)[0])
    if sigma_min <= FRAME_SIGMA_MIN:
        raise DegenerateFrameError(f"frame atoms ({i}, {j}, {k}) are collinear (sigma_min={sigma_min:.3g})")
    e1 = ri - rj
    e1 /= np.linalg.norm(e1)
    e3 = np.cross(e1, rk - rj)
    e3 /= np.linalg.norm(e3)
    e2 = np.cross(e3, e1)
    return FrameResult(np.stack([e1, e2, e3], axis=1), sigma_min)


def _anchor_vector(pos, spec):
    if spec.anchor_mode == "edge":
        i, j, _ = spec.frame
        return pos[i] - pos[j]
    return pos[spec.anchor] - pos.mean(axis=0)


def canonical_direction(positions, frame, a):
    """Unit anchor direction ``R^T (r_a - centroid) / |r_a - centroid|``."""
    pos = check_positions(positions)
    delta = pos[a] - pos.mean(axis=0)
    norm = np.linalg.norm(delta)
    if norm <= ANCHOR_MIN_NORM:
        raise DegenerateAnchorError(f"anchor atom {a} coincides with the centroid")
    return frame.R.T @ delta / norm


def _check_spec_atoms(pos, spec):
    n = pos.shape[0]
    idx = (*spec.frame, spec.anchor)
    if min(idx) < 0 or max(idx) >= n:
        raise ValueError(f"atom indices {idx} out of range for {n} atoms")
    if spec.anchor_mode == "centroid" and (n < 4 or spec.anchor in spec.frame):
        raise ValueError("the anchor must be a fourth atom distinct from the frame triple")


def _energy_and_grad(pos, spec, want_grad):
    _check_spec_atoms(pos, spec)
    frame = body_frame(pos, *spec.frame)
    delta = _anchor_vector(pos, spec)
    if np.linalg.norm(delta) <= ANCHOR_MIN_NORM:
        raise DegenerateAnchorError(f"anchor atom {spec.anchor} coincides with the centroid")
    R = frame.R
    u = R.T @ delta
    l = spec.l_inj
    c = spec.coefficients
    blk = slice(l * l, (l + 1) ** 2)
    n = u / np.linalg.norm(u)
    energy = spec.amplitude * float(c @ solid_harmonics(l, n[None, :])[0, blk])
    if not want_grad:
        return energy, None
    _, dY = sh_direction_grad(l, u[None, :])
    g = spec.amplitude * (c @ dY[0, blk])  # dE/du

    # Reverse pass through u_k = e_k . delta and the Gram-Schmidt frame.
    i, j, k = spec.frame
    e1, e2, e3 = R[:, 0], R[:, 1], R[:, 2]
    a_vec = pos[i] - pos[j]
    c_vec = pos[k] - pos[j]
    b_vec = np.cross(e1, c_vec)
    lam1, lam2, lam3 = g[0] * delta, g[1] * delta, g[2] * delta
    bar_e3 = lam3 + np.cross(e1, lam2)
    bar_e1 = lam1 + np.cross(lam2, e3)
    bar_b = (bar_e3 - e3 * (e3 @ bar_e3)) / np.linalg.norm(b_vec)
    bar_e1 = bar_e1 + np.cross(c_vec, bar_b)
    bar_c = np.cross(bar_b, e1)
    bar_a = (bar_e1 - e1 * (e1 @ bar_e1)) / np.linalg.norm(a_vec)

    grad = np.zeros_like(pos)
    grad[i] += bar_a
    grad[j] -= bar_a + bar_c
    grad[k] += bar_c
    bar_delta = R @ g
    if spec.anchor_mode == "edge":
        grad[i] += bar_delta
        grad[j] -= bar_delta
    else:
        grad[spec.anchor] += bar_delta
        grad -= bar_delta / pos.shape[0]
    return energy, grad


def injected_energy(config, spec):
    pos = config.positions if isinstance(config, Configuration) else check_positions(config)
    return _energy_and_grad(pos, spec, want_grad=False)[0]


def injected_forces(config, spec):
    """Analytic ``-grad E_inj`` with shape ``(N, 3)``."""
    pos = config.positions if isinstance(config, Configuration) else check_positions(config)
    return -_energy_and_grad(pos, spec, want_grad=True)[1]


def injected_forces_fd(config, spec, h=1e-5):
    """Central finite-difference forces; a cross-check for ``injected_forces``."""
    pos = config.positions if isinstance(config, Configuration) else check_positions(config)
    out = np.zeros_like(pos)
    for a in range(pos.shape[0]):
        for d in range(3):
            p = pos.copy()
            p[a, d] += h
            ep = _energy_and_grad(p, spec, False)[0]
            p[a, d] -= 2 * h
            em = _energy_and_grad(p, spec, False)[0]
            out[a, d] = -(ep - em) / (2 * h)
    return out


def inject_dataset(dataset, spec, skip_degenerate=False):
    """Add ``E_inj`` and ``F_inj`` to every frame; inputs are not modified.

    Returns ``(injected, rejected)`` where ``rejected`` lists
    ``(frame_index, reason)``.  Rejections abort with ``GateError`` unless
    ``skip_degenerate`` is set, in which case rejected frames are dropped.
    """
    injected, rejected = [], []
    for idx, cfg in enumerate(dataset):
        try:
            energy, grad = _energy_and_grad(cfg.positions, spec, want_grad=True)
        except (DegenerateFrameError, DegenerateAnchorError) as exc:
            rejected.append((idx, str(exc)))
            continue
        injected.append(replace(cfg, positions=cfg.positions.copy(), energy=cfg.energy + energy,
                                forces=cfg.forces - grad, symbols=list(cfg.symbols)))
    if rejected and not skip_degenerate:
        raise GateError(f"{len(rejected)} frame(s) failed the frame gates",
                        {"rejected": [{"frame": i, "reason": r} for i, r in rejected]})
    return injected, rejected


def amplitude_calibrate(F_nat, F_1x, k):
    """``F_nat + k (F_1x - F_nat)``."""
    F_nat, F_1x = check_same_shape(F_nat, F_1x, ("F_nat", "F_1x"))
    return F_nat + k * (F_1x - F_nat)


def _stack_forces(data):
    if len(data) == 0:
        raise ValueError("empty dataset")
    if isinstance(data[0], Configuration):
        return np.concatenate([c.forces.ravel() for c in data])
    return np.concatenate([np.asarray(f, dtype=float).ravel() for f in data])


def variance_share(dataset_nat, dataset_inj):
    """Fraction ``eta`` of per-component force variance due to the injection."""
    if len(dataset_nat) != len(dataset_inj):
        raise ValueError("datasets must have the same number of frames")
    f_nat = _stack_forces(dataset_nat)
    f_tot = _stack_forces(dataset_inj)
    if f_nat.shape != f_tot.shape:
        raise ValueError("datasets differ in atom counts")
    var_nat = float(np.var(f_nat))
    var_inj = float(np.var(f_tot - f_nat))
    total = var_nat + var_inj
    return var_inj / total if total > 0 else 0.0


def force_scale(dataset):
    """``sigma_F = sqrt(<|F|^2>)`` per atom over the dataset."""
    f = _stack_forces(dataset).reshape(-1, 3)
    return float(np.sqrt(np.mean(np.sum(f * f, axis=1))))


def projected_coefficients(dataset, spec):
    """Per-frame SH regressors ``Y_{l_inj}^m(n_canon)``, shape ``(frames, 2l+1)``.

    These are the series the leakage gate correlates across splits.
    """
    l = spec.l_inj
    rows = []
    for cfg in dataset:
        frame = body_frame(cfg.positions, *spec.frame)
        n = frame.R.T @ _anchor_vector(cfg.positions, spec)
        n /= np.linalg.norm(n)
        rows.append(solid_harmonics(l, n[None, :])[0, l * l:(l + 1) ** 2])
    return np.array(rows).reshape(len(rows), 2 * l + 1)


def split_leakage(splits):
    """Max squared Pearson correlation of per-coefficient series across split pairs.

    ``splits`` is a sequence of ``(frames, n_coeffs)`` arrays.  Series of a
    pair are aligned by frame order and truncated to the shorter split.
    Pairs with a constant series are skipped with a warning.
    """
    arrays = [np.atleast_2d(np.asarray(s, dtype=float)) for s in splits]
    if len(arrays) < 2:
        raise ValueError("need at least two splits")
    for a in arrays:
        if a.shape[0] < 2:
            raise ValueError("each split needs at least two samples")
        if a.shape[1] != arrays[0].shape[1]:
            raise ValueError("splits disagree on coefficient count")
    best = 0.0
    for p in range(len(arrays)):
        for q in range(p + 1, len(arrays)):
            n = min(arrays[p].shape[0], arrays[q].shape[0])
            A, B = arrays[p][:n], arrays[q][:n]
            for col in range(A.shape[1]):
                x = A[:, col] - A[:, col].mean()
                y = B[:, col] - B[:, col].mean()
                sx, sy = np.sqrt(x @ x), np.sqrt(y @ y)
                if sx == 0 or sy == 0:
                    logger.warning("constant series in splits (%d, %d) coefficient %d skipped", p, q, col)
                    continue
                best = max(best, float((x @ y / (sx * sy)) ** 2))
    return best


def leakage_passes(rho2_max, threshold=LEAKAGE_GATE):
    return rho2_max < threshold
