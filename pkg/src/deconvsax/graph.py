"""Markov transition networks built from discretized sequences.

A sequence is mapped to ``Q`` bins, consecutive bin pairs are counted and
row-normalized into a transition matrix, and that matrix is read as a
weighted directed graph on ``Q`` nodes. Unvisited bins stay as isolated
nodes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import quoteattr

import numpy as np
from scipy.sparse.csgraph import shortest_path
from scipy.special import stdtr

from .container import atomic_write
from .sax import gaussian_bins, znormalize


class NoReachablePairsWarning(UserWarning):
    """Average path length requested on a graph without any directed path."""


@dataclass(frozen=True)
class QuantizerConfig:
    Q: int = 10
    mode: str = "gaussian"

    def __post_init__(self):
        if self.Q < 2:
            raise ValueError(f"Q must be >= 2, got {self.Q}")
        if self.mode not in ("gaussian", "quantile"):
            raise ValueError(f"mode must be 'gaussian' or 'quantile', got {self.mode!r}")


def discretize(x, cfg: QuantizerConfig) -> np.ndarray:
    """Map each value to a bin in ``[0, Q)``.

    ``gaussian`` z-normalizes and cuts at the N(0, 1) Q-iles. ``quantile``
    assigns by rank: a value with ``r`` strictly smaller values goes to bin
    ``floor(Q * r / len(x))``, so tied values always share a bin.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("discretize needs a 1-D sequence of length >= 2")
    if cfg.mode == "gaussian":
        return gaussian_bins(znormalize(x), cfg.Q)
    ranks = np.searchsorted(np.sort(x), x, side="left")
    return (cfg.Q * ranks) // len(x)


def transition_matrix(bins, Q: int) -> np.ndarray:
    """Row-normalized counts of consecutive (b_t, b_{t+1}) pairs."""
    bins = np.asarray(bins)
    if bins.ndim != 1 or len(bins) < 2:
        raise ValueError("need a sequence of at least two bins")
    if not np.issubdtype(bins.dtype, np.integer) or bins.min() < 0 or bins.max() >= Q:
        raise ValueError(f"bins must be integers in [0, {Q})")
    counts = np.zeros((Q, Q))
    np.add.at(counts, (bins[:-1], bins[1:]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


@dataclass
class TransitionGraph:
    weights: np.ndarray

    @property
    def Q(self) -> int:
        return self.weights.shape[0]

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        src, dst = np.nonzero(self.weights > 0)
        return [(int(i), int(j), float(self.weights[i, j])) for i, j in zip(src, dst)]

    @classmethod
    def from_series(cls, x, cfg: QuantizerConfig) -> "TransitionGraph":
        return cls(transition_matrix(discretize(x, cfg), cfg.Q))


def avg_degree(g: TransitionGraph) -> float:
    """Mean of (in + out) / 2 over all nodes; equals arcs / nodes."""
    support = g.weights > 0
    return float((support.sum(axis=0) + support.sum(axis=1)).mean() / 2.0)


def _modularity_matrix(g: TransitionGraph) -> np.ndarray:
    # Symmetrize, then double the diagonal so a self-loop adds twice its
    # weight to the node degree (usual undirected-graph convention).
    a = (g.weights + g.weights.T) / 2.0
    return a + np.diag(np.diag(a))


def modularity(g: TransitionGraph, partition: Sequence[int]) -> float:
    """Newman modularity of ``partition`` on the symmetrized graph."""
    return _modularity(_modularity_matrix(g), np.asarray(partition))


def _modularity(b: np.ndarray, comm: np.ndarray) -> float:
    two_m = b.sum()
    if two_m <= 0:
        return 0.0
    k = b.sum(axis=1)
    same = comm[:, None] == comm[None, :]
    return float(((b - np.outer(k, k) / two_m) * same).sum() / two_m)


def _one_level(b: np.ndarray) -> np.ndarray:
    """Greedy local moving in node index order; returns community labels."""
    n = len(b)
    k = b.sum(axis=1)
    two_m = b.sum()
    comm = np.arange(n)
    tot = k.copy()
    improved = True
    while improved:
        improved = False
        for i in range(n):
            own = comm[i]
            tot[own] -= k[i]
            links = np.bincount(comm, weights=b[i], minlength=n)
            links[own] -= b[i, i]
            candidates = np.unique(comm[(b[i] > 0) & (np.arange(n) != i)])
            best, best_gain = own, links[own] - k[i] * tot[own] / two_m
            for c in candidates:
                gain = links[c] - k[i] * tot[c] / two_m
                if gain > best_gain + 1e-12:
                    best, best_gain = c, gain
            comm[i] = best
            tot[best] += k[i]
            if best != own:
                improved = True
    _, labels = np.unique(comm, return_inverse=True)
    return labels


def modularity_louvain(g: TransitionGraph) -> tuple[np.ndarray, float]:
    """Louvain community detection on the symmetrized graph.

    Nodes are visited in index order, so the result is deterministic.
    Returns per-node community labels (numbered by first appearance) and the
    modularity of that partition.
    """
    b = _modularity_matrix(g)
    n = len(b)
    if b.sum() <= 0:
        return np.arange(n), 0.0
    membership = np.arange(n)
    current = b
    while True:
        labels = _one_level(current)
        if labels.max() + 1 == len(current):
            break
        membership = labels[membership]
        k = labels.max() + 1
        agg = np.zeros((k, k))
        np.add.at(agg, (labels[:, None], labels[None, :]), current)
        current = agg
    _, first = np.unique(membership, return_index=True)
    order = np.argsort(np.argsort(first))
    membership = order[membership]
    return membership, _modularity(b, membership)


def pagerank(g: TransitionGraph, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Power iteration; dangling nodes spread their mass uniformly."""
    n = g.Q
    w = g.weights
    out = w.sum(axis=1)
    p = np.divide(w, out[:, None], out=np.zeros_like(w), where=out[:, None] > 0)
    dangling = out <= 0
    r = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = damping * (r @ p + r[dangling].sum() / n) + (1.0 - damping) / n
        nxt /= nxt.sum()
        done = np.abs(nxt - r).sum() < tol
        r = nxt
        if done:
            break
    return r


def avg_path_length(g: TransitionGraph) -> float:
    """Mean unweighted directed shortest-path length over reachable ordered pairs.

    Returns 0 and emits :class:`NoReachablePairsWarning` when no pair is
    reachable.
    """
    d = shortest_path((g.weights > 0).astype(float), directed=True, unweighted=True)
    np.fill_diagonal(d, np.inf)
    finite = np.isfinite(d)
    if not finite.any():
        warnings.warn("graph has no reachable node pairs", NoReachablePairsWarning, stacklevel=2)
        return 0.0
    return float(d[finite].mean())


@dataclass(frozen=True)
class GraphStats:
    avg_degree: float
    modularity: float
    pagerank_max: float
    avg_path_length: float
    path_length_defined: bool = True

    FIELDS = ("avg_degree", "modularity", "pagerank_max", "avg_path_length")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.avg_degree, self.modularity, self.pagerank_max, self.avg_path_length)


def graph_stats(g: TransitionGraph) -> GraphStats:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NoReachablePairsWarning)
        apl = avg_path_length(g)
    return GraphStats(
        avg_degree=avg_degree(g),
        modularity=modularity_louvain(g)[1],
        pagerank_max=float(pagerank(g).max()),
        avg_path_length=apl,
        path_length_defined=not any(issubclass(w.category, NoReachablePairsWarning) for w in caught),
    )


def mean_stats(stats: Sequence[GraphStats]) -> GraphStats:
    """Average several graphs' statistics (e.g. all code maps of one sample)."""
    if not stats:
        raise ValueError("no statistics to average")
    values = np.mean([s.as_tuple() for s in stats], axis=0)
    return GraphStats(*map(float, values), path_length_defined=all(s.path_length_defined for s in stats))


def significance(a, b) -> float:
    """Two-sided Welch t-test p-value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least 2 samples")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        return 1.0 if diff == 0 else 0.0
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return float(min(1.0, 2.0 * stdtr(df, -abs(t))))


def _fmt(w: float) -> str:
    return repr(float(w))


def to_dot(g: TransitionGraph) -> str:
    lines = ["digraph G {"]
    lines += [f"  {i};" for i in range(g.Q)]
    lines += [f"  {i} -> {j} [weight={_fmt(w)}];" for i, j, w in g.edges]
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_graphml(g: TransitionGraph) -> str:
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns">',
        '  <key id="weight" for="edge" attr.name="weight" attr.type="double"/>',
        '  <graph id="G" edgedefault="directed">',
    ]
    lines += [f"    <node id={quoteattr(str(i))}/>" for i in range(g.Q)]
    lines += [
        f'    <edge source="{i}" target="{j}"><data key="weight">{_fmt(w)}</data></edge>'
        for i, j, w in g.edges
    ]
    lines += ["  </graph>", "</graphml>"]
    return "\n".join(lines) + "\n"


def export_graph(g: TransitionGraph, path, format: str = "graphml") -> Path:
    if format == "graphml":
        text = to_graphml(g)
    elif format == "dot":
        text = to_dot(g)
    else:
        raise ValueError(f"unknown graph format {format!r}")
    return atomic_write(path, text)


STAT_COLUMNS = ("Avg. Degree", "Modularity", "Pagerank", "Avg. Path Length")


def stats_table(name: str, groups: dict[str, Sequence[GraphStats]]) -> str:
    """Tab-separated per-class means plus a Welch p-value row.

    ``groups`` maps a class name to one :class:`GraphStats` per sample. The
    p-value row needs exactly two classes.
    """
    out = ["\t" + "\t".join(STAT_COLUMNS)]
    for cls, stats in groups.items():
        means = np.mean([s.as_tuple() for s in stats], axis=0)
        out.append(f"{name} {cls}\t" + "\t".join(f"{v:.4f}" for v in means))
    if len(groups) == 2:
        a, b = (np.array([s.as_tuple() for s in v]) for v in groups.values())
        if len(a) >= 2 and len(b) >= 2:
            p = [significance(a[:, k], b[:, k]) for k in range(4)]
            out.append("P value\t" + "\t".join(f"{v:.4g}" for v in p))
    return "\n".join(out) + "\n"
