"""Gram matrices for the representer systems.

Sample ``j`` of replicate ``i`` sits at row ``i*r + j`` of the block matrix
``J`` (0-based). Pair coefficients ``beta_ijk`` are vectorized column-major
inside each replicate's ``r x r`` matrix, skipping the diagonal, which gives
the 1-based map::

    l = (i-1) r (r-1) + (k-1)(r-1) + j - [j > k]

The covariance Gram ``H`` is the block Khatri-Rao product of ``J`` with
itself, restricted to off-diagonal pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .kernels import ZonalKernel
from .sphere import gram_cosines

DEFAULT_THRESHOLD = 0.01
_CHUNK_PAIRS = 4_000_000


@dataclass(frozen=True)
class VectorizationSpec:
    n: int
    r: int

    def __post_init__(self):
        if self.n < 1 or self.r < 2:
            raise ValueError("need n >= 1 and r >= 2")

    @property
    def L(self) -> int:
        return self.n * self.r * (self.r - 1)


def vec_index(i: int, j: int, k: int, spec: VectorizationSpec) -> int:
    """1-based pair index of triple ``(i, j, k)``."""
    n, r = spec.n, spec.r
    if not (1 <= i <= n and 1 <= j <= r and 1 <= k <= r):
        raise IndexError(f"triple {(i, j, k)} out of range for n={n}, r={r}")
    if j == k:
        raise ValueError("diagonal pairs (j == k) are not vectorized")
    return (i - 1) * r * (r - 1) + (k - 1) * (r - 1) + j - (1 if j > k else 0)


def inv_vec_index(ell: int, spec: VectorizationSpec) -> tuple[int, int, int]:
    """Inverse of :func:`vec_index`."""
    r = spec.r
    if not 1 <= ell <= spec.L:
        raise IndexError(f"index {ell} outside [1, {spec.L}]")
    m = ell - 1
    i = 1 + m // (r * (r - 1))
    rem = m % (r * (r - 1))
    k = 1 + rem // (r - 1)
    h = 1 + rem % (r - 1)
    j = h + (1 if h >= k else 0)
    return i, j, k


def pair_triples(r_list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """0-based ``(i, j, k)`` arrays of all off-diagonal pairs in vector order."""
    out_i, out_j, out_k = [], [], []
    for i, r in enumerate(r_list):
        kk, jj = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
        mask = jj != kk
        out_i.append(np.full(mask.sum(), i))
        out_j.append(jj[mask])
        out_k.append(kk[mask])
    return np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_k)


def lag_pairs(n: int, r: int, h: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """0-based ``(t, j, k)`` for all pairs ``(U_{t+h,j}, U_{t,k})``, diagonal kept.

    Ordered as ``t*r*r + k*r + j``.
    """
    t, k, j = np.meshgrid(np.arange(n - h), np.arange(r), np.arange(r), indexing="ij")
    return t.ravel(), j.ravel(), k.ravel()


def system_dimensions(n: int, r: int) -> dict:
    """Size of the Khatri-Rao product before and after diagonal removal."""
    return {"khatri_rao": n * r * r, "L": n * r * (r - 1)}


def build_J(locations, kernel: ZonalKernel, threshold_frac: float = DEFAULT_THRESHOLD) -> sp.csr_matrix:
    """Sparse kernel Gram matrix over all samples, stacked by replicate.

    Entries with ``|psi| < threshold_frac * psi(1)`` are dropped.
    """
    if threshold_frac < 0:
        raise ValueError("threshold_frac must be >= 0")
    rs = {np.shape(u)[0] for u in locations}
    if len(rs) != 1:
        raise ValueError("build_J requires a constant number of samples per replicate; "
                         "use the dense general path for ragged data")
    pts = np.vstack(locations)
    vals = kernel(gram_cosines(pts, pts))
    vals = 0.5 * (vals + vals.T)
    if threshold_frac > 0:
        keep = np.abs(vals) >= threshold_frac * kernel.peak
        np.fill_diagonal(keep, True)
        vals = np.where(keep, vals, 0.0)
        mat = sp.csr_matrix(vals)
    else:
        mat = sp.csr_matrix(vals)
        if mat.nnz != vals.size:
            # keep exact-zero kernel values as stored entries
            rows, cols = np.indices(vals.shape)
            mat = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=vals.shape)
    mat.sort_indices()
    return mat


def nnz_fraction(mat) -> float:
    return mat.nnz / float(mat.shape[0] * mat.shape[1])


def _block_entries(J: sp.csr_matrix, r: int, n_blocks: int):
    """J entries grouped by ``r x r`` block: sorted COO plus block offsets."""
    coo = J.tocoo()
    bi, bj = coo.row // r, coo.col // r
    bid = bi * n_blocks + bj
    order = np.lexsort((coo.col, coo.row, bid))
    bid = bid[order]
    local_row = (coo.row % r)[order]
    local_col = (coo.col % r)[order]
    vals = coo.data[order]
    counts = np.bincount(bid, minlength=n_blocks * n_blocks)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return local_row, local_col, vals, counts, starts


def khatri_rao_gram(J: sp.csr_matrix, r: int, lag: int = 0) -> sp.csr_matrix:
    """Gram matrix of pair features built from blocks of ``J``.

    ``lag == 0``: entry ``((i1,j1,k1), (i2,j2,k2))`` is
    ``J[i1 j1, i2 j2] * J[i1 k1, i2 k2]`` over off-diagonal pairs, i.e.
    ``S (J * J) S^T``. ``lag > 0``: the ``j`` factor comes from block
    ``(t1+lag, t2+lag)`` and the ``k`` factor from ``(t1, t2)``, over all
    ``(n - lag) r^2`` pairs.
    """
    if J.shape[0] != J.shape[1] or J.shape[0] % r:
        raise ValueError("J must be square with size divisible by r")
    n = J.shape[0] // r
    if not 0 <= lag < n:
        raise ValueError("lag must satisfy 0 <= lag < n")
    lrow, lcol, vals, counts, starts = _block_entries(J, r, n)
    m = n - lag
    t1, t2 = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    t1, t2 = t1.ravel(), t2.ravel()
    kb = t1 * n + t2
    jb = (t1 + lag) * n + (t2 + lag)
    ck, cj = counts[kb], counts[jb]
    live = (ck > 0) & (cj > 0)
    t1, t2, kb, jb, ck, cj = t1[live], t2[live], kb[live], jb[live], ck[live], cj[live]

    if lag == 0:
        width, dim = r * (r - 1), m * r * (r - 1)
    else:
        width, dim = r * r, m * r * r

    def index(t, j, k):
        if lag == 0:
            return t * width + k * (r - 1) + j - (j > k)
        return t * width + k * r + j

    rows_out, cols_out, vals_out = [], [], []
    sizes = ck * cj
    cum = np.cumsum(sizes)
    n_chunks = int(cum[-1] // _CHUNK_PAIRS) if len(cum) else 0
    edges = np.searchsorted(cum, _CHUNK_PAIRS * np.arange(1, n_chunks + 1), side="right")
    bounds = np.unique(np.concatenate(([0], edges, [len(sizes)])))
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sl = slice(lo, hi)
        sz = sizes[sl]
        bp = np.repeat(np.arange(hi - lo), sz)
        offs = np.arange(sz.sum()) - np.repeat(np.cumsum(sz) - sz, sz)
        e_k = starts[kb[sl]][bp] + offs // cj[sl][bp]
        e_j = starts[jb[sl]][bp] + offs % cj[sl][bp]
        k1, k2 = lrow[e_k], lcol[e_k]
        j1, j2 = lrow[e_j], lcol[e_j]
        v = vals[e_k] * vals[e_j]
        if lag == 0:
            keep = (j1 != k1) & (j2 != k2)
            k1, k2, j1, j2, v, bp = k1[keep], k2[keep], j1[keep], j2[keep], v[keep], bp[keep]
        rows_out.append(index(t1[sl][bp], j1, k1))
        cols_out.append(index(t2[sl][bp], j2, k2))
        vals_out.append(v)
    rows = np.concatenate(rows_out) if rows_out else np.zeros(0, int)
    cols = np.concatenate(cols_out) if cols_out else np.zeros(0, int)
    data = np.concatenate(vals_out) if vals_out else np.zeros(0)
    H = sp.csr_matrix((data, (rows, cols)), shape=(dim, dim))
    H.sort_indices()
    return H


def build_H_sparse(J: sp.csr_matrix, spec: VectorizationSpec) -> sp.csr_matrix:
    """``S (J * J) S^T`` for constant ``r`` (unnormalized)."""
    if J.shape != (spec.n * spec.r, spec.n * spec.r):
        raise ValueError(f"J has shape {J.shape}, expected {(spec.n * spec.r,) * 2}")
    return khatri_rao_gram(J, spec.r, lag=0)


def build_mean_gram(dataset, kernel: ZonalKernel) -> np.ndarray:
    """Dense mean-system Gram ``psi(<u_a, u_b>) / sqrt(r_a r_b)``."""
    rep, pts, _ = dataset.stacked()
    scale = 1.0 / np.sqrt(np.asarray(dataset.r_list, dtype=float))[rep]
    G = kernel(gram_cosines(pts, pts)) * np.outer(scale, scale)
    return 0.5 * (G + G.T)


def _sample_offsets(r_list) -> np.ndarray:
    return np.concatenate(([0], np.cumsum(r_list)[:-1]))


def build_H_general(dataset, kernel: ZonalKernel) -> np.ndarray:
    """Dense normalized covariance Gram for arbitrary ``r_i >= 2``."""
    dataset.require_pairs()
    r_list = dataset.r_list
    i, j, k = pair_triples(r_list)
    off = _sample_offsets(r_list)
    a, b = off[i] + j, off[i] + k
    _, pts, _ = dataset.stacked()
    psi = kernel(gram_cosines(pts, pts))
    psi = 0.5 * (psi + psi.T)
    rr = np.asarray(r_list, dtype=float)
    c = 1.0 / np.sqrt(rr * (rr - 1.0))[i]
    return psi[np.ix_(a, a)] * psi[np.ix_(b, b)] * np.outer(c, c)


def save_sparse(path, mat) -> None:
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(json.dumps({"rows": mat.shape[0], "cols": mat.shape[1], "nnz": int(coo.nnz)}) + "\n")
        for r_, c_, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r_} {c_} {v:.17g}\n")


def load_sparse(path) -> sp.csr_matrix:
    lines = Path(path).read_text().splitlines()
    head = json.loads(lines[0])
    if head["nnz"]:
        body = np.loadtxt(lines[1:], ndmin=2)
        rows, cols, vals = body[:, 0].astype(int), body[:, 1].astype(int), body[:, 2]
    else:
        rows = cols = np.zeros(0, int)
        vals = np.zeros(0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(head["rows"], head["cols"]))


class KhatriRaoOperator:
    """Matrix-free product with the pair Gram built from ``J`` blocks.

    Applies the same matrix as :func:`khatri_rao_gram` via
    ``Y_p = sum_q A_pq B_q C_pq^T`` where ``B_q`` holds the pair
    coefficients of replicate ``q`` as an ``r x r`` matrix,
    ``A_pq = J_{p+lag, q+lag}`` and ``C_pq = J_pq``.
    """

    def __init__(self, J, r: int, lag: int = 0):
        J = J.toarray() if sp.issparse(J) else np.asarray(J, dtype=float)
        if J.shape[0] != J.shape[1] or J.shape[0] % r:
            raise ValueError("J must be square with size divisible by r")
        n = J.shape[0] // r
        if not 0 <= lag < n:
            raise ValueError("lag must satisfy 0 <= lag < n")
        blocks = J.reshape(n, r, n, r).transpose(0, 2, 1, 3)
        m = n - lag
        self.r, self.lag, self.m = r, lag, m
        self._right = np.ascontiguousarray(blocks[:m, :m].transpose(0, 1, 3, 2))
        self._left = blocks[lag:, lag:] if lag else blocks
        if lag == 0:
            t, j, k = pair_triples([r] * m)
        else:
            t, j, k = lag_pairs(n, r, lag)
        self._idx = (t, j, k)
        self.shape = (t.size, t.size)

    def to_blocks(self, x) -> np.ndarray:
        B = np.zeros((self.m, self.r, self.r))
        B[self._idx] = x
        return B

    def from_blocks(self, B) -> np.ndarray:
        return B[self._idx]

    def matvec(self, x) -> np.ndarray:
        B = self.to_blocks(np.asarray(x, dtype=float))
        T = np.matmul(self._left, B[None, :, :, :])
        Y = np.matmul(T, self._right).sum(axis=1)
        return self.from_blocks(Y)

    __matmul__ = matvec

    def diagonal(self) -> np.ndarray:
        t, j, k = self._idx
        return self._left[t, t, j, j] * self._right[t, t, k, k]

    def nnz(self) -> int:
        """Stored entries of the equivalent explicit matrix (before diagonal removal)."""
        left = np.count_nonzero(self._left, axis=(2, 3))
        right = np.count_nonzero(self._right, axis=(2, 3))
        return int(np.sum(left * right))
