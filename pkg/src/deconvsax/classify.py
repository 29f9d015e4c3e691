"""Linear SVM, bag-of-SAX-words features, leave-one-out CV and grid search.

The SVM minimizes ``0.5 * ||w||^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))``
with the bias learned as the weight of a constant feature (value
``bias_scale``), solved by dual coordinate descent. Sample visiting order is
drawn from a seeded xorshift generator, so every fit is reproducible.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .container import FormatError, read_container, write_container
from .sax import SaxParams, decode_word, word_codes

log = logging.getLogger(__name__)

DEFAULT_GRID = {
    "n": (8, 16, 32, 64),
    "w": (2, 4, 8),
    "a": (3, 4, 5, 6, 7),
    "C": (0.01, 0.1, 1.0, 10.0),
}


# --------------------------------------------------------------------------
# solver kernels


@numba.njit(cache=True, nogil=True)
def _xorshift(state):
    x = state[0]
    x ^= (x << np.uint64(13)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    x ^= x >> np.uint64(7)
    x ^= (x << np.uint64(17)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    state[0] = x
    return x


@numba.njit(cache=True, nogil=True)
def _shuffle(idx, state):
    for k in range(len(idx) - 1, 0, -1):
        j = int(_xorshift(state) % np.uint64(k + 1))
        idx[k], idx[j] = idx[j], idx[k]


@numba.njit(cache=True, nogil=True)
def _dot(w, indptr, indices, data, i, bias_scale, d):
    s = w[d] * bias_scale
    for p in range(indptr[i], indptr[i + 1]):
        s += w[indices[p]] * data[p]
    return s


@numba.njit(cache=True, nogil=True)
def _objectives(indptr, indices, data, y, C, bias_scale, alpha, w, active):
    d = len(w) - 1
    reg = 0.0
    for j in range(d + 1):
        reg += w[j] * w[j]
    hinge = 0.0
    asum = 0.0
    for k in range(len(active)):
        i = active[k]
        m = 1.0 - y[i] * _dot(w, indptr, indices, data, i, bias_scale, d)
        if m > 0.0:
            hinge += m
        asum += alpha[i]
    return 0.5 * reg + C * hinge, asum - 0.5 * reg


@numba.njit(cache=True, nogil=True)
def _dcd(indptr, indices, data, y, C, bias_scale, alpha, w, active, seed, tol, max_epochs, trace):
    """Dual coordinate descent for the L1-loss SVM, updating alpha/w in place.

    ``active`` lists the rows taking part; ``trace`` (epochs x 2) receives
    the primal and dual objectives after each epoch when it has rows.
    Returns the number of epochs run.
    """
    d = len(w) - 1
    n_act = len(active)
    qd = np.empty(n_act)
    for k in range(n_act):
        i = active[k]
        s = bias_scale * bias_scale
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * data[p]
        qd[k] = s
    order = np.arange(n_act)
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed) * np.uint64(2654435761) + np.uint64(88172645463325252)
    epoch = 0
    while epoch < max_epochs:
        _shuffle(order, state)
        pg_max = -np.inf
        pg_min = np.inf
        for t in range(n_act):
            k = order[t]
            i = active[k]
            if qd[k] <= 0.0:
                continue
            g = y[i] * _dot(w, indptr, indices, data, i, bias_scale, d) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg > pg_max:
                pg_max = pg
            if pg < pg_min:
                pg_min = pg
            if pg != 0.0:
                new = min(max(a - g / qd[k], 0.0), C)
                delta = (new - a) * y[i]
                if delta != 0.0:
                    alpha[i] = new
                    for p in range(indptr[i], indptr[i + 1]):
                        w[indices[p]] += delta * data[p]
                    w[d] += delta * bias_scale
        if epoch < trace.shape[0]:
            trace[epoch, 0], trace[epoch, 1] = _objectives(indptr, indices, data, y, C, bias_scale, alpha, w, active)
        epoch += 1
        if pg_max - pg_min < tol:
            break
    return epoch


@numba.njit(cache=True, nogil=True)
def _greedy_cd(Q, C, alpha, G, active, tol, max_iter):
    """Greedy dual coordinate descent on a dense Hessian ``Q``.

    Updates ``alpha`` and the gradient ``G = Q @ alpha - 1`` in place, always
    moving the coordinate with the largest projected gradient, until every
    active projected gradient is below ``tol / 2`` in magnitude.
    """
    n = len(alpha)
    for it in range(max_iter):
        best = 0.5 * tol
        jb = -1
        for j in range(n):
            if not active[j] or Q[j, j] <= 0.0:
                continue
            g = G[j]
            if alpha[j] <= 0.0:
                pg = min(g, 0.0)
            elif alpha[j] >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            if abs(pg) >= best:
                best = abs(pg)
                jb = j
        if jb < 0:
            return it
        a = alpha[jb]
        new = min(max(a - G[jb] / Q[jb, jb], 0.0), C)
        delta = new - a
        if delta == 0.0:
            return it
        alpha[jb] = new
        for k in range(n):
            G[k] += Q[jb, k] * delta
    return max_iter


@numba.njit(cache=True, nogil=True)
def _loo_predictions(Q, y, C, alpha_full, tol, max_iter):
    """Decision value for every row from a model trained without that row.

    Each fold starts from the full solution with the held-out dual variable
    zeroed and its column removed from the gradient, then re-optimizes
    greedily; removing one row usually disturbs only a few coordinates.
    Since ``Q`` is built from inner products, features only the held-out row
    has never enter its decision, exactly as if the vocabulary were refit.
    """
    n = len(y)
    G_full = Q @ alpha_full - 1.0
    active = np.ones(n, dtype=np.bool_)
    out = np.empty(n)
    for i in range(n):
        alpha = alpha_full.copy()
        G = G_full.copy()
        a = alpha[i]
        if a != 0.0:
            alpha[i] = 0.0
            for k in range(n):
                G[k] -= Q[i, k] * a
        active[i] = False
        _greedy_cd(Q, C, alpha, G, active, tol, max_iter)
        active[i] = True
        out[i] = y[i] * (G[i] + 1.0)
    return out


def gram_matrix(X, bias_scale: float = 1.0) -> np.ndarray:
    """Dense inner products of the bias-augmented rows of ``X``."""
    X = _as_csr(X)
    return np.asarray((X @ X.T).toarray(), dtype=np.float64) + bias_scale * bias_scale


# --------------------------------------------------------------------------
# model


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    C: float
    epochs_run: int = 0
    trace: np.ndarray | None = None

    def decision(self, X) -> np.ndarray:
        X = _as_csr(X)
        if X.shape[1] != len(self.weights):
            raise ValueError(f"feature dimension {X.shape[1]} != model dimension {len(self.weights)}")
        return np.asarray(X @ self.weights).ravel() + self.bias


def _as_csr(X) -> sp.csr_matrix:
    if sp.issparse(X):
        X = X.tocsr()
    else:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        X = sp.csr_matrix(X)
    X.sort_indices()
    return sp.csr_matrix((X.data.astype(np.float64), X.indices.astype(np.int64), X.indptr.astype(np.int64)), shape=X.shape)


def _labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    return y


def _solve(X: sp.csr_matrix, y: np.ndarray, C: float, seed: int, bias_scale: float, tol: float,
           max_epochs: int, trace_epochs: int = 0) -> tuple[np.ndarray, np.ndarray, int, np.ndarray]:
    alpha = np.zeros(X.shape[0])
    w = np.zeros(X.shape[1] + 1)
    trace = np.full((trace_epochs, 2), np.nan)
    epochs = _dcd(X.indptr, X.indices, X.data, y, float(C), float(bias_scale), alpha, w,
                  np.arange(X.shape[0], dtype=np.int64), int(seed), float(tol), int(max_epochs), trace)
    return alpha, w, epochs, trace[:min(epochs, trace_epochs)]


def train_svm(X, y, C: float = 1.0, epochs: int = 1000, seed: int = 0, bias_scale: float = 1.0,
              tol: float = 1e-2, trace: bool = False) -> SvmModel:
    """Fit a linear SVM; ``epochs`` caps the number of coordinate-descent passes."""
    if C <= 0:
        raise ValueError("C must be positive")
    y = _labels(y)
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain both classes")
    X = _as_csr(X)
    if X.shape[0] != len(y):
        raise ValueError(f"{X.shape[0]} rows but {len(y)} labels")
    _, w, run, tr = _solve(X, y, C, seed, bias_scale, tol, epochs, epochs if trace else 0)
    return SvmModel(w[:-1].copy(), float(w[-1] * bias_scale), float(C), run, tr if trace else None)


def predict(model: SvmModel, X) -> np.ndarray:
    """Labels in {-1, +1}; a zero decision value maps to +1."""
    return np.where(model.decision(X) >= 0, 1, -1)


def error_rate(model: SvmModel, X, y) -> float:
    y = _labels(y)
    return float(np.mean(predict(model, X) != y)) if len(y) else 0.0


def loo_decisions(X, y, C: float, seed: int = 0, bias_scale: float = 1.0, tol: float = 1e-2,
                  max_epochs: int = 1000, gram: np.ndarray | None = None) -> np.ndarray:
    """Leave-one-out decision values, one per row.

    Features that only the held-out row contains are ignored for that row,
    which is exactly what refitting the vocabulary on the other rows does.
    ``gram`` may pass a precomputed ``gram_matrix(X, bias_scale)`` to share
    it across values of C. Memory is O(n^2) in the number of rows.
    """
    y = _labels(y)
    X = _as_csr(X)
    if len(y) < 2:
        raise ValueError("LOO needs at least 2 samples")
    if X.shape[0] != len(y):
        raise ValueError(f"{X.shape[0]} rows but {len(y)} labels")
    n_pos = int((y > 0).sum())
    # a fold whose remaining rows are all one class predicts that class
    lone = np.where(y > 0, n_pos == 1, len(y) - n_pos == 1)
    if lone.all():
        return -y
    alpha, _, _, _ = _solve(X, y, C, seed, bias_scale, tol, max_epochs)
    K_ = gram_matrix(X, bias_scale) if gram is None else gram
    if K_.shape != (len(y), len(y)):
        raise ValueError(f"gram matrix shape {K_.shape} does not match {len(y)} rows")
    Q = K_ * np.outer(y, y)
    max_iter = int(max_epochs) * len(y)
    G = Q @ alpha - 1.0
    _greedy_cd(Q, float(C), alpha, G, np.ones(len(y), dtype=np.bool_), float(tol), max_iter)
    dec = _loo_predictions(Q, y, float(C), alpha, float(tol), max_iter)
    return np.where(lone, -y, dec)


def loo_error(X, y, C: float, seed: int = 0, **kw) -> float:
    y = _labels(y)
    dec = loo_decisions(X, y, C, seed, **kw)
    return float(np.mean(np.where(dec >= 0, 1, -1) != y))


# --------------------------------------------------------------------------
# bag-of-words features


@dataclass
class WordBags:
    """Integer-keyed word counts for a batch of samples.

    Key ``m * a**w + code`` identifies word ``code`` of code map ``m``.
    """

    params: SaxParams
    keys: list[np.ndarray]
    counts: list[np.ndarray]
    totals: np.ndarray

    def as_strings(self, i: int) -> dict[str, int]:
        base = self.params.a ** self.params.w
        return {
            f"{int(k) // base}:{decode_word(int(k) % base, self.params)}": int(c)
            for k, c in zip(self.keys[i], self.counts[i])
        }


def word_bags(maps: np.ndarray, p: SaxParams, normalize_windows: bool = True,
              numerosity_reduction: bool = False) -> WordBags:
    """Bag SAX words of every flattened code map; ``maps`` is (N, n_maps, M)."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim == 2:
        maps = maps[:, None, :]
    base = p.a ** p.w
    keys, counts, totals = [], [], []
    for sample in maps:
        parts = [m * base + word_codes(row, p, normalize_windows, numerosity_reduction) for m, row in enumerate(sample)]
        allk = np.concatenate(parts)
        k, c = np.unique(allk, return_counts=True)
        keys.append(k)
        counts.append(c)
        totals.append(len(allk))
    return WordBags(p, keys, counts, np.array(totals))


NORMS = ("hellinger", "l1", "none")


@dataclass
class Vocabulary:
    words: np.ndarray
    norm: str = "hellinger"

    @classmethod
    def fit(cls, bags: WordBags, rows: Iterable[int] | None = None, norm: str = "hellinger") -> "Vocabulary":
        if norm not in NORMS:
            raise ValueError(f"unknown normalization {norm!r}")
        rows = range(len(bags.keys)) if rows is None else rows
        parts = [bags.keys[i] for i in rows]
        words = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
        return cls(words, norm)

    def __len__(self) -> int:
        return len(self.words)

    def transform(self, bags: WordBags, rows: Sequence[int] | None = None) -> sp.csr_matrix:
        """Rows of relative word frequencies; words outside the vocabulary are dropped.

        With ``l1`` the divisor is the sample's full window count, so a
        dropped word never inflates the frequencies of the kept ones.
        ``hellinger`` takes the square root of those frequencies, giving rows
        of unit Euclidean norm (at most one once words are dropped).
        """
        rows = range(len(bags.keys)) if rows is None else rows
        indptr, indices, data = [0], [], []
        for i in rows:
            k, c = bags.keys[i], bags.counts[i]
            pos = np.searchsorted(self.words, k)
            ok = (pos < len(self.words)) & (self.words[np.minimum(pos, len(self.words) - 1)] == k) if len(self.words) else np.zeros(len(k), bool)
            vals = c[ok].astype(np.float64)
            if self.norm != "none" and bags.totals[i] > 0:
                vals /= bags.totals[i]
            if self.norm == "hellinger":
                vals = np.sqrt(vals)
            indices.append(pos[ok])
            data.append(vals)
            indptr.append(indptr[-1] + int(ok.sum()))
        ind = np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64)
        dat = np.concatenate(data) if data else np.zeros(0)
        return sp.csr_matrix((dat, ind, np.array(indptr)), shape=(len(indptr) - 1, len(self.words)))


def code_lengths_ok(p: SaxParams, map_length: int) -> bool:
    return p.w <= p.n <= map_length


# --------------------------------------------------------------------------
# search


@dataclass
class GridResult:
    rows: list[dict]
    best: dict

    def table(self) -> str:
        keys = [k for k in ("n", "w", "a") if k in self.rows[0]] + ["C", "cv_error"]
        out = ["\t".join(keys)]
        for r in self.rows:
            out.append("\t".join(_fmt(r[k]) for k in keys))
        return "\n".join(out) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _parsimony_key(row: dict) -> tuple:
    return (row["cv_error"], row.get("a", 0), row.get("w", 0), row.get("n", 0), row["C"])


def grid_search_sax(maps: np.ndarray, y, space: dict | None = None, seed: int = 0, workers: int = 1,
                    norm: str = "hellinger", progress: Callable[[dict], None] | None = None, **sax_kw) -> GridResult:
    """Exhaustive LOO search over (n, w, a, C) for bag-of-SAX features.

    ``maps`` is (N, n_maps, M) from the training set. Every grid point gets a
    row; configurations invalid for length ``M`` carry ``cv_error = nan``.
    Ties prefer smaller a, then w, then n, then C.
    """
    space = {**DEFAULT_GRID, **(space or {})}
    y = _labels(y)
    maps = np.asarray(maps, dtype=np.float64)
    m_len = maps.shape[-1]
    combos = list(itertools.product(space["n"], space["w"], space["a"]))
    valid = [(n, w, a) for n, w, a in combos if w <= n <= m_len and 2 <= a <= 26]
    if not valid:
        raise ValueError(f"no SAX configuration in the grid fits code maps of length {m_len}")

    def evaluate(nwa):
        n, w, a = nwa
        bags = word_bags(maps, SaxParams(n, w, a), **sax_kw)
        X = Vocabulary.fit(bags, norm=norm).transform(bags)
        K_ = gram_matrix(X)
        return [loo_error(X, y, C, seed, gram=K_) for C in space["C"]]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(evaluate, valid))
    else:
        results = [evaluate(v) for v in valid]
    errs = dict(zip(valid, results))
    rows = []
    for n, w, a in combos:
        for ci, C in enumerate(space["C"]):
            e = errs[(n, w, a)][ci] if (n, w, a) in errs else float("nan")
            rows.append({"n": n, "w": w, "a": a, "C": float(C), "cv_error": e})
            if progress is not None:
                progress(rows[-1])
    best = min((r for r in rows if not math.isnan(r["cv_error"])), key=_parsimony_key)
    return GridResult(rows, best)


def grid_search_vector(X, y, Cs: Sequence[float] = DEFAULT_GRID["C"], seed: int = 0) -> GridResult:
    y = _labels(y)
    X = _as_csr(X)
    K_ = gram_matrix(X)
    rows = [{"C": float(C), "cv_error": loo_error(X, y, C, seed, gram=K_)} for C in Cs]
    return GridResult(rows, min(rows, key=_parsimony_key))


@dataclass
class FeatureMatrix:
    """Train/test features ready for the SVM, with the fitted vocabulary (if any)."""

    X_train: sp.csr_matrix
    y_train: np.ndarray
    X_test: sp.csr_matrix
    y_test: np.ndarray
    mode: str
    params: dict = field(default_factory=dict)
    vocabulary: np.ndarray | None = None
    dataset: str = ""
    selection: dict = field(default_factory=dict)
    cv_rows: list[dict] = field(default_factory=list)

    def check(self, where: str = "features") -> None:
        if self.X_train.shape[1] != self.X_test.shape[1]:
            raise FormatError(f"{where}: train has {self.X_train.shape[1]} columns, test {self.X_test.shape[1]}")
        if self.X_train.shape[0] != len(self.y_train) or self.X_test.shape[0] != len(self.y_test):
            raise FormatError(f"{where}: row and label counts differ")


def sax_features(train_maps, y_train, test_maps, y_test, p: SaxParams, norm: str = "hellinger", **sax_kw) -> FeatureMatrix:
    train_bags = word_bags(train_maps, p, **sax_kw)
    test_bags = word_bags(test_maps, p, **sax_kw)
    vocab = Vocabulary.fit(train_bags, norm=norm)
    return FeatureMatrix(
        vocab.transform(train_bags), _labels(y_train), vocab.transform(test_bags), _labels(y_test),
        "sax", {"n": p.n, "w": p.w, "a": p.a}, vocab.words,
    )


def vector_features(train_maps, y_train, test_maps, y_test) -> FeatureMatrix:
    tr = np.asarray(train_maps, dtype=np.float64)
    te = np.asarray(test_maps, dtype=np.float64)
    return FeatureMatrix(
        _as_csr(tr.reshape(len(tr), -1)), _labels(y_train), _as_csr(te.reshape(len(te), -1)), _labels(y_test), "vector",
    )


FEATURES_MAGIC = b"DCSXFEAT"
FEATURES_VERSION = 1


def save_features(path, f: FeatureMatrix) -> None:
    """Persist a :class:`FeatureMatrix` as CSR triplets in a checked container."""
    f.check(str(path))
    arrays = {}
    for part, X, y in (("train", f.X_train, f.y_train), ("test", f.X_test, f.y_test)):
        arrays[f"{part}_data"] = X.data
        arrays[f"{part}_indices"] = X.indices.astype(np.int64)
        arrays[f"{part}_indptr"] = X.indptr.astype(np.int64)
        arrays[f"{part}_labels"] = y.astype(np.int64)
    if f.vocabulary is not None:
        arrays["vocabulary"] = np.asarray(f.vocabulary, dtype=np.int64)
    meta = {
        "mode": f.mode,
        "params": f.params,
        "dataset": f.dataset,
        "selection": f.selection,
        "cv_rows": [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()} for r in f.cv_rows],
        "shape": {"train": list(f.X_train.shape), "test": list(f.X_test.shape)},
    }
    write_container(path, FEATURES_MAGIC, FEATURES_VERSION, meta, arrays)


def load_features(path) -> FeatureMatrix:
    meta, arrays = read_container(path, FEATURES_MAGIC, FEATURES_VERSION)
    try:
        mats = {}
        for part in ("train", "test"):
            shape = tuple(meta["shape"][part])
            mats[part] = sp.csr_matrix(
                (arrays[f"{part}_data"], arrays[f"{part}_indices"], arrays[f"{part}_indptr"]), shape=shape
            )
            mats[part + "_y"] = arrays[f"{part}_labels"].astype(np.float64)
        rows = [{k: (float("nan") if v is None else v) for k, v in r.items()} for r in meta["cv_rows"]]
        f = FeatureMatrix(
            mats["train"], mats["train_y"], mats["test"], mats["test_y"], meta["mode"], meta["params"],
            arrays.get("vocabulary"), meta["dataset"], meta["selection"], rows,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid feature file ({exc})") from exc
    f.check(str(path))
    return f
