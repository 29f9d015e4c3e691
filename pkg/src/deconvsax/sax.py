"""Symbolic Aggregate approXimation and bag-of-words histograms."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# PAA values closer than this to a breakpoint count as lying on it. Window
# means of z-normalized data are often zero up to rounding, and the upper
# letter must win regardless of the last bit.
BREAKPOINT_TOL = 1e-10
ZNORM_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class SaxParams:
    n: int
    w: int
    a: int

    def __post_init__(self):
        if not 2 <= self.a <= 26:
            raise ValueError(f"alphabet size must be in [2, 26], got {self.a}")
        if not 1 <= self.w <= self.n:
            raise ValueError(f"need 1 <= w <= n, got w={self.w}, n={self.n}")


def znormalize(x) -> np.ndarray:
    """Zero mean, unit population std; near-constant input maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalize an empty vector")
    std = x.std()
    if std < ZNORM_STD_FLOOR:
        return np.zeros_like(x)
    return (x - x.mean()) / std


@lru_cache(maxsize=None)
def _paa_weights(m: int, w: int) -> np.ndarray:
    # Scaled by w, point i spans [i*w, (i+1)*w) and segment j spans
    # [j*m, (j+1)*m); their overlaps are integers.
    i = np.arange(m)
    j = np.arange(w)
    lo = np.maximum(i[None, :] * w, j[:, None] * m)
    hi = np.minimum((i[None, :] + 1) * w, (j[:, None] + 1) * m)
    weights = np.maximum(hi - lo, 0) / m
    weights.flags.writeable = False
    return weights


def paa(x, w: int) -> np.ndarray:
    """Piecewise aggregate approximation with fractional boundary coverage."""
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[-1]
    if not 1 <= w <= m:
        raise ValueError(f"need 1 <= w <= len(x), got w={w}, len={m}")
    return x @ _paa_weights(m, w).T


@lru_cache(maxsize=None)
def _breakpoints(q: int) -> tuple[float, ...]:
    nd = NormalDist()
    return tuple(nd.inv_cdf(k / q) for k in range(1, q))


def gaussian_breakpoints(q: int) -> np.ndarray:
    """Equiprobable N(0, 1) cut points Phi^-1(k/q), k = 1..q-1, for any q >= 2.

    The inverse CDF is the standard library's (Wichura's AS241, accurate to
    about 1e-16).
    """
    if q < 2:
        raise ValueError(f"need at least 2 bins, got {q}")
    return np.array(_breakpoints(q))


def breakpoints(a: int) -> np.ndarray:
    """SAX breakpoints for an alphabet of ``a`` letters (2..26)."""
    if not 2 <= a <= 26:
        raise ValueError(f"alphabet size must be in [2, 26], got {a}")
    return gaussian_breakpoints(a)


def gaussian_bins(values, q: int) -> np.ndarray:
    """Bin k with beta_k <= v < beta_{k+1}; values on a cut point go up."""
    bp = gaussian_breakpoints(q)
    return np.searchsorted(bp - BREAKPOINT_TOL, np.asarray(values, dtype=np.float64), side="right")


def letter_indices(values, a: int) -> np.ndarray:
    if not 2 <= a <= 26:
        raise ValueError(f"alphabet size must be in [2, 26], got {a}")
    return gaussian_bins(values, a)


def symbolize(means, a: int) -> str:
    return "".join(chr(ord("a") + int(k)) for k in letter_indices(means, a))


def sax_letters(x, p: SaxParams, normalize_windows: bool = True) -> np.ndarray:
    """Letter indices for every stride-1 window, shaped (L - n + 1, w)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("sax expects a 1-D series")
    if len(x) < p.n:
        raise ValueError(f"series of length {len(x)} is shorter than the window n={p.n}")
    win = sliding_window_view(x, p.n)
    if normalize_windows:
        mean = win.mean(axis=1, keepdims=True)
        std = win.std(axis=1, keepdims=True)
        flat = std < ZNORM_STD_FLOOR
        win = np.where(flat, 0.0, (win - mean) / np.where(flat, 1.0, std))
    return letter_indices(paa(win, p.w), p.a)


def word_codes(x, p: SaxParams, normalize_windows: bool = True, numerosity_reduction: bool = False) -> np.ndarray:
    """SAX words as integers in base ``a`` (first letter most significant)."""
    letters = sax_letters(x, p, normalize_windows)
    codes = letters @ (p.a ** np.arange(p.w - 1, -1, -1, dtype=np.int64))
    if numerosity_reduction and len(codes) > 1:
        keep = np.concatenate([[True], codes[1:] != codes[:-1]])
        codes = codes[keep]
    return codes


def decode_word(code: int, p: SaxParams) -> str:
    letters = []
    for _ in range(p.w):
        code, r = divmod(int(code), p.a)
        letters.append(chr(ord("a") + r))
    return "".join(reversed(letters))


def sax_transform(x, p: SaxParams, normalize_windows: bool = True, numerosity_reduction: bool = False) -> list[str]:
    """One w-letter word per stride-1 window of length n."""
    return [decode_word(c, p) for c in word_codes(x, p, normalize_windows, numerosity_reduction)]


def bag_of_words(words: Iterable[str], prefix: str = "") -> Counter:
    return Counter(prefix + wd for wd in words)


def merge(*hists: Counter) -> Counter:
    out = Counter()
    for h in hists:
        out.update(h)
    return out


def histogram_to_text(hist: Counter) -> str:
    return "".join(f"{word}\t{count}\n" for word, count in sorted(hist.items()))


def histogram_from_text(text: str) -> Counter:
    hist = Counter()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        word, sep, count = line.rpartition("\t")
        if not sep:
            raise ValueError(f"line {lineno}: expected word<TAB>count")
        hist[word] = int(count)
    return hist


def multi_map_bag(maps: Sequence[np.ndarray], p: SaxParams, **kw) -> Counter:
    """Merged bag over several flattened code maps, keys prefixed ``"<map>:"``."""
    return merge(*(bag_of_words(sax_transform(m, p, **kw), prefix=f"{i}:") for i, m in enumerate(maps)))
