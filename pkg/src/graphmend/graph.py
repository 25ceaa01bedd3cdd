"""Phase 2 graph construction: directional k-NN adjacency, then
symmetric normalization.

Edge weights are clamp(cosine, 0, 1) ** gamma so fractional gamma stays
real even when raw cosine goes negative.  Normalization computes
S = A + A^T, D = diag(row sums of S), W = D^-1/2 S D^-1/2; the per-entry
scale factors are multiplied together first so W is symmetric bit for
bit, and isolated nodes keep all-zero rows.
"""

import numpy as np

from .core import ValidationError


class GraphConfig:
    def __init__(self, k_graph=50, gamma=3.0):
        if k_graph < 1:
            raise ValidationError("k_graph must be >= 1")
        if gamma < 1.0:
            raise ValidationError("gamma must be >= 1")
        self.k_graph = int(k_graph)
        self.gamma = float(gamma)


class SparseGraph:
    """CSR adjacency; `normalized` marks the symmetric normalized form."""

    def __init__(self, n, indptr, indices, data, normalized=False):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        self.normalized = bool(normalized)

    @property
    def nnz(self):
        return self.data.shape[0]

    def toarray(self):
        out = np.zeros((self.n, self.n))
        for i in range(self.n):
            sl = slice(self.indptr[i], self.indptr[i + 1])
            out[i, self.indices[sl]] = self.data[sl]
        return out


def _normalized_features(features):
    rows = features.data.astype(np.float64)
    norms = np.linalg.norm(rows, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ValidationError("zero-norm feature vector at index %d" % bad[0])
    return rows / norms[:, None]


def _topk_rows(sims, k):
    """Per-row indices of the k largest entries, ties to the lower index.

    Returns (indices, values) with columns ordered by descending value
    and ascending index within equal values.
    """
    b, n = sims.shape
    # threshold = k-th largest per row; everything above it is in, and
    # the gap up to k is filled with the lowest-index entries equal to it
    thresh = -np.partition(-sims, k - 1, axis=1)[:, k - 1]
    above = sims > thresh[:, None]
    need = k - above.sum(axis=1)
    at = sims == thresh[:, None]
    take_eq = at & (np.cumsum(at, axis=1) <= need[:, None])
    mask = above | take_eq
    idx = np.nonzero(mask)[1].reshape(b, k)
    vals = np.take_along_axis(sims, idx, axis=1)
    # nonzero already yields ascending index per row; a stable sort on
    # descending value preserves that order inside ties
    order = np.argsort(-vals, axis=1, kind="stable")
    return np.take_along_axis(idx, order, axis=1), np.take_along_axis(vals, order, axis=1)


def knn_neighbors(features, k_graph, block=512):
    """For each node, the k_graph most cosine-similar other nodes.

    Returns (neighbors, sims), each (n, k_graph), neighbour columns
    sorted by descending similarity then ascending index.
    """
    n = features.n_samples
    if n < 2:
        raise ValidationError("need at least 2 samples for neighbour search")
    if not k_graph < n:
        raise ValidationError("k_graph must be < n_samples")
    unit = _normalized_features(features)
    neighbors = np.empty((n, k_graph), dtype=np.int64)
    sims = np.empty((n, k_graph))
    for start in range(0, n, block):
        stop = min(start + block, n)
        s = unit[start:stop] @ unit.T
        s[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        idx, vals = _topk_rows(s, k_graph)
        neighbors[start:stop] = idx
        sims[start:stop] = vals
    return neighbors, sims


def build_adjacency(features, cfg):
    """Directional adjacency: A(s, t) = clamp(cos, 0, 1)^gamma for each
    target t and source s among its k_graph nearest neighbours."""
    n = features.n_samples
    neighbors, sims = knn_neighbors(features, cfg.k_graph)
    weights = np.clip(sims, 0.0, 1.0) ** cfg.gamma
    # entry (s, t): source row s = neighbour of target t
    rows = neighbors.ravel()
    cols = np.repeat(np.arange(n), cfg.k_graph)
    data = weights.ravel()
    order = np.lexsort((cols, rows))
    rows, cols, data = rows[order], cols[order], data[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return SparseGraph(n, indptr, cols, data, normalized=False)


def normalize_graph(A):
    """Symmetric normalization W = D^-1/2 (A + A^T) D^-1/2."""
    n = A.n
    rows_a = np.repeat(np.arange(n), np.diff(A.indptr))
    cols_a = A.indices
    # symmetrize in COO form, merging duplicate (row, col) pairs
    rows = np.concatenate([rows_a, cols_a])
    cols = np.concatenate([cols_a, rows_a])
    data = np.concatenate([A.data, A.data])
    order = np.lexsort((cols, rows))
    rows, cols, data = rows[order], cols[order], data[order]
    if rows.size:
        new_pair = np.empty(rows.size, dtype=np.bool_)
        new_pair[0] = True
        new_pair[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.flatnonzero(new_pair)
        merged = np.add.reduceat(data, starts)
        rows, cols, data = rows[starts], cols[starts], merged
    degree = np.bincount(rows, weights=data, minlength=n)
    inv_sqrt = np.zeros(n)
    alive = degree > 0
    inv_sqrt[alive] = 1.0 / np.sqrt(degree[alive])
    # multiply the two scale factors together first; the product is the
    # same for (s, t) and (t, s), keeping W exactly symmetric
    data = data * (inv_sqrt[rows] * inv_sqrt[cols])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return SparseGraph(n, indptr, cols, data, normalized=True)
