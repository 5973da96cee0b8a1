"""Spectral prediction network (SPN) readout head with hand-written backprop.

Forward pass for one atom::

    s = invariants(h)                  # l=0 passthrough, per-channel norms, ...
    a = MLP_theta(s)                   # (L_out + 1)^2 invariant scalars a^{lm}
    P[l] = sum_m (a^{lm})^2            # per-degree power summary
    E = g_phi(P)                       # scalar energy head

Features ``h`` arrive as ``(n, channels, (L+1)^2)`` arrays of real SH blocks.
"""
import copy
import itertools
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cgspan import default_table, triple_allowed
from .exceptions import TrainingError
from ._validation import random_directions
from .sphharm import degree_of_index, n_coeffs, solid_harmonics

ACTIVATIONS = ("identity", "square", "silu")
# 1/sqrt(3) keeps E[z^2] near 1 through a squaring layer (E[z^4] = 3 var^2).
_INIT_GAIN = {"identity": 1.0, "square": 1.0 / np.sqrt(3.0), "silu": 1.0}


def _act(name, z):
    if name == "identity":
        return z
    if name == "square":
        return z * z
    if name == "silu":
        return z / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z):
    if name == "identity":
        return np.ones_like(z)
    if name == "square":
        return 2.0 * z
    if name == "silu":
        sig = 1.0 / (1.0 + np.exp(-z))
        return sig * (1.0 + z * (1.0 - sig))
    raise ValueError(f"unknown activation {name!r}")


def _check_blocks(features):
    h = np.asarray(features, dtype=float)
    if h.ndim == 2:
        h = h[:, None, :]
    if h.ndim != 3:
        raise ValueError(f"features must have shape (n, channels, (L+1)^2), got {h.shape}")
    L = int(round(np.sqrt(h.shape[2]))) - 1
    if n_coeffs(L) != h.shape[2]:
        raise ValueError(f"last axis {h.shape[2]} is not a square (L+1)^2")
    return h, L


def _cubic_triples(L):
    return [t for t in itertools.combinations_with_replacement(range(1, L + 1), 3) if triple_allowed(*t)]


def extract_invariants(features, degree):
    """Rotation-invariant scalars of per-channel SH blocks.

    ``degree=1``: the ``l=0`` entries.  ``degree=2``: additionally the norm of
    every ``l>0`` block per channel.  ``degree=3``: additionally the Gaunt
    contraction ``sum G h^{l1} h^{l2} h^{l3}`` of each channel with itself for
    every admissible ``1 <= l1 <= l2 <= l3``.
    """
    h, L = _check_blocks(features)
    if degree not in (1, 2, 3):
        raise ValueError("degree must be 1, 2 or 3")
    parts = [h[:, :, 0]]
    if degree >= 2:
        for l in range(1, L + 1):
            parts.append(np.linalg.norm(h[:, :, l * l:(l + 1) ** 2], axis=2))
    if degree == 3:
        table = default_table()
        for l1, l2, l3 in _cubic_triples(L):
            G = table.block(l1, l2, l3)
            parts.append(np.einsum("nka,nkb,nkc,abc->nk", h[:, :, l1 * l1:(l1 + 1) ** 2],
                                   h[:, :, l2 * l2:(l2 + 1) ** 2], h[:, :, l3 * l3:(l3 + 1) ** 2], G))
    return np.concatenate(parts, axis=1)


class InvariantExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`extract_invariants`."""

    def __init__(self, degree=2):
        self.degree = degree

    def fit(self, X, y=None):
        _, self.lmax_ = _check_blocks(X)
        return self

    def transform(self, X):
        return extract_invariants(X, self.degree)


@dataclass
class SPNParams:
    """Weights of both MLPs plus the fixed input standardization."""

    degree: int
    l_out: int
    activation: str
    weights: dict = field(default_factory=dict)
    s_mean: np.ndarray = None
    s_scale: np.ndarray = None

    @property
    def n_theta(self):
        return sum(1 for k in self.weights if k.startswith("theta.W"))

    @property
    def n_phi(self):
        return sum(1 for k in self.weights if k.startswith("phi.W"))

    def n_parameters(self):
        return int(sum(w.size for w in self.weights.values()))

    def copy(self):
        return copy.deepcopy(self)


def init_params(n_invariants, degree=2, hidden=(128, 128), energy_hidden=32, l_out=6,
                activation="silu", seed=0, s_mean=None, s_scale=None):
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    rng = np.random.Generator(np.random.Philox(seed))
    gain = _INIT_GAIN[activation]
    weights = {}
    sizes = [n_invariants, *hidden, n_coeffs(l_out)]
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        weights[f"theta.W{k}"] = gain * rng.standard_normal((a, b)) / np.sqrt(a)
        weights[f"theta.b{k}"] = np.zeros(b)
    sizes = [l_out + 1, energy_hidden, 1]
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        weights[f"phi.W{k}"] = gain * rng.standard_normal((a, b)) / np.sqrt(a)
        weights[f"phi.b{k}"] = np.zeros(b)
    s_mean = np.zeros(n_invariants) if s_mean is None else np.asarray(s_mean, dtype=float)
    s_scale = np.ones(n_invariants) if s_scale is None else np.asarray(s_scale, dtype=float)
    return SPNParams(degree, l_out, activation, weights, s_mean, s_scale)


def _degree_pool(l_out):
    D = np.zeros((n_coeffs(l_out), l_out + 1))
    D[np.arange(n_coeffs(l_out)), degree_of_index(l_out)] = 1.0
    return D


def _mlp_forward(x, params, prefix, n_layers, cache):
    for k in range(n_layers):
        z = x @ params.weights[f"{prefix}.W{k}"] + params.weights[f"{prefix}.b{k}"]
        cache.append((x, z))
        x = _act(params.activation, z) if k < n_layers - 1 else z
    return x


def head_forward(s, params, return_cache=False):
    """Energies from raw invariants ``s`` of shape ``(n, K)``."""
    x = (np.asarray(s, dtype=float) - params.s_mean) / params.s_scale
    cache_t, cache_p = [], []
    a = _mlp_forward(x, params, "theta", params.n_theta, cache_t)
    D = _degree_pool(params.l_out)
    P = (a * a) @ D
    E = _mlp_forward(P, params, "phi", params.n_phi, cache_p)[:, 0]
    if return_cache:
        return E, (cache_t, cache_p, a, D)
    return E


def spn_forward(features, params):
    """Per-atom SPN energy for feature blocks ``(n, channels, (L+1)^2)``."""
    s = extract_invariants(features, params.degree)
    if s.shape[1] != params.s_mean.size:
        raise ValueError(f"features give {s.shape[1]} invariants, params expect {params.s_mean.size}")
    return head_forward(s, params)


def _mlp_backward(grad_out, params, prefix, cache, grads):
    g = grad_out
    n_layers = len(cache)
    for k in reversed(range(n_layers)):
        x, z = cache[k]
        if k < n_layers - 1:
            g = g * _act_grad(params.activation, z)
        grads[f"{prefix}.W{k}"] = x.T @ g
        grads[f"{prefix}.b{k}"] = g.sum(axis=0)
        g = g @ params.weights[f"{prefix}.W{k}"].T
    return g


def loss_and_grad(s, y, params, weight_decay=0.0):
    """Mean squared error and its exact gradient with respect to every weight."""
    y = np.asarray(y, dtype=float)
    E, (cache_t, cache_p, a, D) = head_forward(s, params, return_cache=True)
    r = E - y
    loss = float(np.mean(r * r))
    grads = {}
    gP = _mlp_backward((2.0 / r.size) * r[:, None], params, "phi", cache_p, grads)
    ga = 2.0 * a * (gP @ D.T)
    _mlp_backward(ga, params, "theta", cache_t, grads)
    if weight_decay:
        for k, w in params.weights.items():
            if ".W" in k:
                loss += 0.5 * weight_decay * float(np.sum(w * w))
                grads[k] = grads[k] + weight_decay * w
    return loss, grads


def _loss(s, y, params):
    r = head_forward(s, params) - y
    return float(np.mean(r * r))


def spn_train(s_train, y_train, params0, epochs=100, lr=1e-3, s_val=None, y_val=None,
              batch_size=64, seed=0, weight_decay=1e-5, betas=(0.9, 0.999), eps=1e-8):
    """Adam on the mean squared energy error; returns ``(best_params, history)``.

    ``s_*`` are raw invariant matrices.  The best-validation parameters are
    returned (training loss is used when no validation set is given).
    """
    s_train = np.asarray(s_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    if not (np.all(np.isfinite(s_train)) and np.all(np.isfinite(y_train))):
        raise ValueError("training inputs must be finite")
    if s_val is None:
        s_val, y_val = s_train, y_train
    params = params0.copy()
    m = {k: np.zeros_like(w) for k, w in params.weights.items()}
    v = {k: np.zeros_like(w) for k, w in params.weights.items()}
    rng = np.random.Generator(np.random.Philox(seed))
    best, best_loss = params.copy(), _loss(s_val, y_val, params)
    history = {"train": [], "val": [], "best_epoch": 0}
    t = 0
    n = s_train.shape[0]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = loss_and_grad(s_train[idx], y_train[idx], params, weight_decay)
            if not np.isfinite(loss):
                raise TrainingError("loss became non-finite", {"epoch": epoch, "step": t, "history": history})
            total += loss * idx.size
            t += 1
            for k, g in grads.items():
                m[k] = betas[0] * m[k] + (1 - betas[0]) * g
                v[k] = betas[1] * v[k] + (1 - betas[1]) * g * g
                mhat = m[k] / (1 - betas[0] ** t)
                vhat = v[k] / (1 - betas[1] ** t)
                params.weights[k] = params.weights[k] - lr * mhat / (np.sqrt(vhat) + eps)
        val = _loss(s_val, y_val, params)
        if not np.isfinite(val):
            raise TrainingError("validation loss became non-finite", {"epoch": epoch, "history": history})
        history["train"].append(total / n)
        history["val"].append(val)
        if val < best_loss:
            best, best_loss = params.copy(), val
            history["best_epoch"] = epoch
    return best, history


class SPNRegressor(RegressorMixin, BaseEstimator):
    """SPN readout trained with Adam on per-atom energies.

    ``X`` has shape ``(n, channels, (L+1)^2)``; ``y`` has shape ``(n,)``.
    """

    def __init__(self, degree=2, hidden=(128, 128), energy_hidden=32, l_out=6, activation="silu",
                 lr=1e-3, weight_decay=1e-5, epochs=200, batch_size=64, validation_fraction=0.1,
                 random_state=0):
        self.degree = degree
        self.hidden = hidden
        self.energy_hidden = energy_hidden
        self.l_out = l_out
        self.activation = activation
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y):
        s = extract_invariants(X, self.degree)
        y = np.asarray(y, dtype=float).ravel()
        if s.shape[0] != y.size:
            raise ValueError("X and y disagree on sample count")
        rng = np.random.Generator(np.random.Philox(self.random_state))
        order = rng.permutation(y.size)
        n_val = int(round(self.validation_fraction * y.size))
        val, tr = order[:n_val], order[n_val:]
        self.y_mean_ = float(y[tr].mean())
        self.y_scale_ = float(y[tr].std()) or 1.0
        scale = s[tr].std(axis=0)
        scale[scale < 1e-12] = 1.0
        params0 = init_params(s.shape[1], self.degree, tuple(self.hidden), self.energy_hidden, self.l_out,
                              self.activation, self.random_state, s[tr].mean(axis=0), scale)
        yt = (y - self.y_mean_) / self.y_scale_
        sv, yv = (s[val], yt[val]) if n_val else (None, None)
        self.params_, self.history_ = spn_train(
            s[tr], yt[tr], params0, self.epochs, self.lr, sv, yv, self.batch_size,
            self.random_state, self.weight_decay)
        self.n_features_in_ = s.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return spn_forward(X, self.params_) * self.y_scale_ + self.y_mean_


def gradient_check(s, y, params, n_coords=10, h=1e-6, seed=0, weight_decay=0.0):
    """Relative error ``|g - g_fd| / max(|g|, |g_fd|)`` per weight array.

    Norms run over ``n_coords`` randomly chosen entries of each array, with
    central differences of step ``h``.
    """
    _, grads = loss_and_grad(s, y, params, weight_decay)
    rng = np.random.Generator(np.random.Philox(seed))
    out = {}
    for name, w in params.weights.items():
        flat = rng.choice(w.size, size=min(n_coords, w.size), replace=False)
        analytic, numeric = [], []
        for f in flat:
            i = np.unravel_index(f, w.shape)
            q = params.copy()
            q.weights[name][i] += h
            lp = loss_and_grad(s, y, q, weight_decay)[0]
            q.weights[name][i] -= 2 * h
            lm = loss_and_grad(s, y, q, weight_decay)[0]
            analytic.append(grads[name][i])
            numeric.append((lp - lm) / (2 * h))
        a, n = np.array(analytic), np.array(numeric)
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-300)
        out[name] = float(np.linalg.norm(a - n) / denom)
    return out


def synthetic_density_task(n=2000, L=2, ell=2, channels=4, neighbors=5, seed=0):
    """Features and an invariant target built from random neighbour directions.

    Sample ``i`` has ``neighbors`` random directions ``u_j``.  Channel ``c``
    holds ``sum_j w_cj phi_L(u_j)`` with per-sample random weights, and the
    target is the degree-``ell`` power of the unweighted density
    ``sum_j Y_ell(u_j)``, which is rotation invariant.  Returns ``(X, y)`` with
    ``X`` of shape ``(n, channels, (L+1)^2)``.
    """
    top = max(L, ell)
    dirs = random_directions(n * neighbors, seed).reshape(n, neighbors, 3)
    Y = solid_harmonics(top, dirs.reshape(-1, 3)).reshape(n, neighbors, n_coeffs(top))
    w = np.random.Generator(np.random.Philox(seed + 1)).uniform(0.5, 1.5, size=(n, channels, neighbors))
    X = np.einsum("ncj,njk->nck", w, Y[:, :, :n_coeffs(L)])
    dens = Y[:, :, ell * ell:(ell + 1) ** 2].sum(axis=1)
    return X, np.sum(dens * dens, axis=1)
