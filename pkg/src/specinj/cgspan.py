"""Gaunt coefficients and rank checks for polynomial spans of SH features.

Gaunt blocks are computed by quadrature of triple products on a grid that
integrates them exactly, so the real-basis signs follow ``sphharm`` without
any Wigner-3j phase bookkeeping.
"""
import itertools
import json
from functools import lru_cache
from math import comb

import numpy as np

from ._validation import check_lm
from .exceptions import ResourceError
from .sphharm import (
    CONVENTION_ID,
    L_MAX_SUPPORTED,
    SHVector,
    grid_for_degree,
    n_coeffs,
    sh_index,
    solid_harmonics,
)

MAX_MONOMIALS = 200_000
RANK_RTOL = 1e-8


def triple_allowed(l1, l2, l):
    return abs(l1 - l2) <= l <= l1 + l2 and (l1 + l2 + l) % 2 == 0


def _m_allowed(m1, m2, m):
    # Orders couple only as |m| = |m1| +- |m2|; an odd number of sine factors integrates to zero.
    a1, a2, a = abs(m1), abs(m2), abs(m)
    if a != a1 + a2 and a != abs(a1 - a2):
        return False
    return ((m1 < 0) + (m2 < 0) + (m < 0)) % 2 == 0


@lru_cache(maxsize=None)
def _m_mask(l1, l2, l):
    mask = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l + 1), dtype=bool)
    for m1, m2, m in itertools.product(range(-l1, l1 + 1), range(-l2, l2 + 1), range(-l, l + 1)):
        mask[m1 + l1, m2 + l2, m + l] = _m_allowed(m1, m2, m)
    return mask


class GauntTable:
    """Lazily built, cached table of real Gaunt coefficients up to ``max_degree``.

    Blocks are keyed by ``(l1, l2, l)`` and only exist for triples obeying the
    triangle and parity rules; everything else is an exact zero.
    """

    def __init__(self, max_degree=L_MAX_SUPPORTED):
        if not 0 <= max_degree <= L_MAX_SUPPORTED:
            raise ValueError(f"max_degree must be in [0, {L_MAX_SUPPORTED}]")
        self.max_degree = max_degree
        self._blocks = {}
        self._grid = None
        self._Y = None

    def _basis(self):
        if self._Y is None:
            self._grid = grid_for_degree(3 * self.max_degree)
            self._Y = solid_harmonics(self.max_degree, self._grid.nodes)
        return self._grid, self._Y

    def block(self, l1, l2, l):
        """Dense ``(2l1+1, 2l2+1, 2l+1)`` block, or ``None`` when forbidden."""
        if not triple_allowed(l1, l2, l):
            return None
        key = (l1, l2, l)
        blk = self._blocks.get(key)
        if blk is None:
            if max(key) > self.max_degree:
                raise ValueError(f"degree triple {key} exceeds table max_degree={self.max_degree}")
            if l1 > l2:
                blk = self.block(l2, l1, l).transpose(1, 0, 2)
            else:
                grid, Y = self._basis()
                w = grid.weights
                Y1 = Y[:, l1 * l1:(l1 + 1) ** 2]
                Y2 = Y[:, l2 * l2:(l2 + 1) ** 2]
                Y3 = Y[:, l * l:(l + 1) ** 2]
                blk = np.einsum("k,ka,kb,kc->abc", w, Y1, Y2, Y3, optimize=True)
                blk[~_m_mask(l1, l2, l)] = 0.0
            blk.setflags(write=False)
            self._blocks[key] = blk
        return blk

    def __call__(self, l1, m1, l2, m2, l, m):
        blk = self.block(l1, l2, l)
        if blk is None:
            return 0.0
        return float(blk[m1 + l1, m2 + l2, m + l])

    def build_all(self):
        L = self.max_degree
        for l1, l2, l in itertools.product(range(L + 1), repeat=3):
            self.block(l1, l2, l)
        return self

    def entries(self, atol=0.0):
        """Yield ``(l1, m1, l2, m2, l, m, value)`` for every stored nonzero entry."""
        for (l1, l2, l), blk in sorted(self._blocks.items()):
            for a, b, c in zip(*np.nonzero(np.abs(blk) > atol)):
                yield (l1, int(a) - l1, l2, int(b) - l2, l, int(c) - l, float(blk[a, b, c]))

    def save(self, path):
        self.build_all()
        payload = {
            "convention": CONVENTION_ID,
            "max_degree": self.max_degree,
            "entries": [list(e) for e in self.entries()],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("convention") != CONVENTION_ID:
            raise ValueError(f"cache convention {payload.get('convention')!r} != {CONVENTION_ID!r}")
        table = cls(int(payload["max_degree"]))
        L = table.max_degree
        for l1, l2, l in itertools.product(range(L + 1), repeat=3):
            if triple_allowed(l1, l2, l):
                table._blocks[(l1, l2, l)] = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l + 1))
        for l1, m1, l2, m2, l, m, val in payload["entries"]:
            table._blocks[(l1, l2, l)][m1 + l1, m2 + l2, m + l] = val
        for blk in table._blocks.values():
            blk.setflags(write=False)
        return table


@lru_cache(maxsize=1)
def default_table():
    return GauntTable(L_MAX_SUPPORTED)


def gaunt(l1, m1, l2, m2, l, m):
    """``integral Y_l1^m1 Y_l2^m2 Y_l^m dOmega`` in the package's real convention."""
    for ll, mm in ((l1, m1), (l2, m2), (l, m)):
        check_lm(ll, mm, L_MAX_SUPPORTED)
    return default_table()(l1, m1, l2, m2, l, m)


def product_expand(a, b, table=None):
    """SH coefficients of the pointwise product of two expansions."""
    Lout = a.L + b.L
    if Lout > L_MAX_SUPPORTED:
        raise ValueError(f"product degree {Lout} exceeds L_MAX_SUPPORTED={L_MAX_SUPPORTED}")
    table = table or default_table()
    out = np.zeros(n_coeffs(Lout))
    for l1 in range(a.L + 1):
        ba = a.block(l1)
        if not ba.any():
            continue
        for l2 in range(b.L + 1):
            bb = b.block(l2)
            if not bb.any():
                continue
            for l in range(abs(l1 - l2), l1 + l2 + 1, 2):
                out[l * l:(l + 1) ** 2] += np.einsum("a,b,abc->c", ba, bb, table.block(l1, l2, l))
    return SHVector(Lout, out)


def monomial_to_sh(factors, table=None):
    """Expand ``prod_k Y_{l_k}^{m_k}`` onto the SH basis.

    ``factors`` is a non-empty sequence of ``(l, m)`` pairs.
    """
    factors = list(factors)
    if not factors:
        raise ValueError("a monomial needs at least one factor")
    for l, m in factors:
        check_lm(l, m, L_MAX_SUPPORTED)
    if sum(l for l, _ in factors) > L_MAX_SUPPORTED:
        raise ValueError("total degree of the monomial exceeds L_MAX_SUPPORTED")
    out = SHVector.unit(*factors[0])
    for l, m in factors[1:]:
        out = product_expand(out, SHVector.unit(l, m), table)
    return out


def monomial_count(n_features, d):
    """Number of monomials of total degree ``<= d`` in ``n_features`` variables."""
    return comb(n_features + d, d)


def monomial_index_sets(n_features, d):
    """Index multisets of all monomials with degree ``0..d``, in a fixed order."""
    count = monomial_count(n_features, d)
    if count > MAX_MONOMIALS:
        raise ResourceError(f"{count} monomials exceeds the guard of {MAX_MONOMIALS}")
    out = []
    for k in range(d + 1):
        out.extend(itertools.combinations_with_replacement(range(n_features), k))
    return out


def evaluate_monomials(features, index_sets):
    """Evaluate monomials column-wise; ``features`` has shape ``(n, F)``."""
    features = np.asarray(features, dtype=float)
    out = np.empty((features.shape[0], len(index_sets)))
    cache = {(): np.ones(features.shape[0])}
    for j, idx in enumerate(index_sets):
        col = cache.get(idx)
        if col is None:
            col = cache[idx[:-1]] * features[:, idx[-1]]
            cache[idx] = col
        out[:, j] = col
    return out


def span_rank(L, d, n):
    """Numerical rank of the degree-``n`` components of all monomials in ``phi_L``.

    Equals ``dim`` of the ``H_n`` part of the degree-``<= d`` polynomial span.
    """
    if L < 0 or d < 1 or n < 0:
        raise ValueError("need L >= 0, d >= 1, n >= 0")
    if n > L_MAX_SUPPORTED + 2 or d * L > L_MAX_SUPPORTED:
        raise ValueError("L, d, n outside the supported range")
    index_sets = monomial_index_sets(n_coeffs(L), d)
    grid = grid_for_degree(d * L + n)
    Y = solid_harmonics(max(L, n), grid.nodes)
    M = evaluate_monomials(Y[:, :n_coeffs(L)], index_sets)
    Yn = Y[:, n * n:(n + 1) ** 2]
    proj = (M * grid.weights[:, None]).T @ Yn
    # Scale the cut by the monomials' own L2 size so an all-zero projection has rank 0.
    scale = np.sqrt(np.max(grid.weights @ (M * M)))
    s = np.linalg.svd(proj, compute_uv=False)
    if s.size == 0:
        return 0
    return int(np.sum(s > RANK_RTOL * max(s[0], scale)))


def stretched_top_coefficient(L, q, r, table=None):
    """``(n, n)`` coefficient of ``(Y_L^L)^q Y_r^r`` with ``n = qL + r``.

    The ``Y_0^0`` factor is omitted when ``r == 0``.
    """
    if L < 1 or q < 0 or not 0 <= r < L or q * L + r > L_MAX_SUPPORTED:
        raise ValueError("need L >= 1, 0 <= r < L and qL + r <= L_MAX_SUPPORTED")
    factors = [(L, L)] * q + ([(r, r)] if r > 0 else [])
    if not factors:
        raise ValueError("empty product (q = 0 and r = 0)")
    n = q * L + r
    value = monomial_to_sh(factors, table)[n, n]
    if value == 0.0:
        raise ArithmeticError(f"stretched coefficient vanished for L={L}, q={q}, r={r}")
    return value


def weight_multiplicity(L, d):
    """Count tuples ``(m_1..m_d)``, ``|m_k| <= L``, with ``sum m_k = dL``."""
    if L < 1 or d < 1:
        raise ValueError("need L >= 1 and d >= 1")
    # counts[s]: number of partial tuples summing to s
    counts = {0: 1}
    for _ in range(d):
        nxt = {}
        for s, c in counts.items():
            for m in range(-L, L + 1):
                nxt[s + m] = nxt.get(s + m, 0) + c
        counts = nxt
    return counts.get(d * L, 0)
