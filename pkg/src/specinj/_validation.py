"""Input validation helpers used by the public functions and estimators."""
import numpy as np

UNIT_TOL = 1e-12


def check_directions(dirs, tol=UNIT_TOL):
    """Return ``dirs`` as an ``(n, 3)`` float array of unit vectors.

    A single direction of shape ``(3,)`` is promoted to ``(1, 3)``.
    """
    arr = np.asarray(dirs, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"directions must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("directions contain non-finite values")
    err = np.abs(np.einsum("ij,ij->i", arr, arr) - 1.0)
    if err.size and err.max() > tol:
        raise ValueError(f"directions must be unit vectors (max |r^2-1| = {err.max():.3g})")
    return arr


def check_degree(L, lmax, name="L"):
    if not isinstance(L, (int, np.integer)) or isinstance(L, bool):
        raise TypeError(f"{name} must be an integer, got {type(L).__name__}")
    if L < 0 or L > lmax:
        raise ValueError(f"{name}={L} outside supported range [0, {lmax}]")
    return int(L)


def check_lm(l, m, lmax):
    l = check_degree(l, lmax, "l")
    if not isinstance(m, (int, np.integer)) or abs(m) > l:
        raise ValueError(f"order m={m} invalid for degree l={l}")
    return l, int(m)


def check_positions(positions, min_atoms=1):
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError(f"positions must have shape (N, 3), got {pos.shape}")
    if pos.shape[0] < min_atoms:
        raise ValueError(f"need at least {min_atoms} atoms, got {pos.shape[0]}")
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions contain non-finite values")
    return pos


def check_same_shape(a, b, names=("a", "b")):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {names[0]}{a.shape} vs {names[1]}{b.shape}")
    return a, b


def random_directions(n, seed):
    """``n`` uniformly distributed unit vectors from a Philox stream."""
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
