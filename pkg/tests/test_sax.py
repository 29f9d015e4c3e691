import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from deconvsax.sax import (
    BREAKPOINT_TOL,
    SaxParams,
    bag_of_words,
    breakpoints,
    histogram_from_text,
    histogram_to_text,
    letter_indices,
    merge,
    multi_map_bag,
    paa,
    sax_transform,
    symbolize,
    znormalize,
)


def brute_force_sax(x, n, w, a, table):
    """Reference SAX written from the definition with plain Python loops."""
    words = []
    for start in range(len(x) - n + 1):
        win = [float(v) for v in x[start:start + n]]
        mu = sum(win) / n
        sd = math.sqrt(sum((v - mu) ** 2 for v in win) / n)
        win = [0.0] * n if sd < 1e-8 else [(v - mu) / sd for v in win]
        seg = Fraction(n, w)
        word = ""
        for j in range(w):
            lo, hi = j * seg, (j + 1) * seg
            total = 0.0
            for i in range(math.floor(lo), math.ceil(hi)):
                overlap = min(Fraction(i + 1), hi) - max(Fraction(i), lo)
                total += win[i] * float(overlap)
            mean = total / float(seg)
            k = 0
            while k < len(table) and mean >= table[k] - BREAKPOINT_TOL:
                k += 1
            word += chr(ord("a") + k)
        words.append(word)
    return words


class TestZnormalize:
    def test_hand_values(self):
        np.testing.assert_allclose(znormalize([1, 2, 3]), [-1.224744871, 0.0, 1.224744871], atol=1e-9)

    def test_constant(self):
        assert np.all(znormalize([4.0, 4.0, 4.0]) == 0)

    def test_moments(self):
        z = znormalize(np.random.default_rng(0).normal(3, 5, size=200))
        assert abs(z.mean()) < 1e-9 and abs(z.std() - 1) < 1e-9

    def test_empty(self):
        with pytest.raises(ValueError):
            znormalize([])


class TestPaa:
    def test_divisible(self):
        np.testing.assert_allclose(paa([1, 2, 3, 4, 5, 6], 3), [1.5, 3.5, 5.5])

    def test_fractional(self):
        # segments of length 5/3: [0, 5/3), [5/3, 10/3), [10/3, 5)
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        expected = [(1 + 2 * (2 / 3)) / (5 / 3), (2 * (1 / 3) + 3 + 4 * (1 / 3)) / (5 / 3), (4 * (2 / 3) + 5) / (5 / 3)]
        np.testing.assert_allclose(paa(x, 3), expected)

    def test_identity(self):
        x = np.random.default_rng(1).normal(size=9)
        np.testing.assert_allclose(paa(x, 9), x)

    def test_zeros(self):
        assert np.all(paa(np.zeros(7), 3) == 0)

    def test_too_many_segments(self):
        with pytest.raises(ValueError):
            paa([1.0, 2.0], 3)


class TestBreakpoints:
    def test_two(self):
        np.testing.assert_allclose(breakpoints(2), [0.0], atol=1e-15)

    def test_three(self):
        np.testing.assert_allclose(breakpoints(3), [-0.4307, 0.4307], atol=1e-3)

    def test_four(self):
        np.testing.assert_allclose(breakpoints(4), [-0.6745, 0.0, 0.6745], atol=1e-3)

    @pytest.mark.parametrize("a", range(2, 27))
    def test_against_scipy(self, a):
        np.testing.assert_allclose(breakpoints(a), norm.ppf(np.arange(1, a) / a), atol=1e-8)

    @pytest.mark.parametrize("a", [1, 27])
    def test_range(self, a):
        with pytest.raises(ValueError):
            breakpoints(a)


class TestSymbolize:
    def test_abc(self):
        assert symbolize([-1.0, 0.0, 1.0], 3) == "abc"

    def test_boundary_goes_up(self):
        assert symbolize([0.0, 0.0, 0.0], 2) == "bbb"

    def test_saturation(self):
        assert symbolize([10.0], 26) == "z"
        assert symbolize([-10.0], 26) == "a"

    @settings(max_examples=100, deadline=None)
    @given(
        values=st.lists(st.floats(-5, 5), min_size=1, max_size=8),
        a=st.integers(2, 26),
        pos=st.integers(0, 7),
        bump=st.floats(0, 3),
    )
    def test_monotone(self, values, a, pos, bump):
        pos %= len(values)
        before = letter_indices(values, a)
        values = list(values)
        values[pos] += bump
        after = letter_indices(values, a)
        assert after[pos] >= before[pos]


class TestSaxTransform:
    def test_single_window(self):
        x = np.random.default_rng(2).normal(size=16)
        assert len(sax_transform(x, SaxParams(16, 4, 3))) == 1

    def test_window_count(self):
        x = np.random.default_rng(3).normal(size=50)
        assert len(sax_transform(x, SaxParams(12, 3, 4))) == 50 - 12 + 1

    def test_short_series(self):
        with pytest.raises(ValueError):
            sax_transform(np.zeros(5), SaxParams(8, 2, 3))

    def test_constant_window_middle_letter(self):
        assert sax_transform(np.full(10, 3.0), SaxParams(10, 4, 5)) == ["cccc"]
        assert sax_transform(np.full(10, 3.0), SaxParams(10, 2, 4)) == ["cc"]

    def test_figure_style_word(self):
        # 8 segments over a 3-letter alphabet on a whole ECG-like beat
        t = np.linspace(0, 1, 96)
        beat = np.exp(-((t - 0.4) / 0.03) ** 2) - 0.3 * np.exp(-((t - 0.7) / 0.08) ** 2)
        (word,) = sax_transform(beat, SaxParams(96, 8, 3))
        assert len(word) == 8 and set(word) <= set("abc")

    def test_numerosity_reduction(self):
        x = np.tile([0.0, 1.0], 10)
        full = sax_transform(x, SaxParams(2, 2, 3))
        reduced = sax_transform(x, SaxParams(2, 2, 3), numerosity_reduction=True)
        assert len(full) == 19
        assert all(a != b for a, b in zip(reduced, reduced[1:]))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            length = int(rng.integers(20, 201))
            n = int(rng.integers(2, min(length, 64) + 1))
            w = int(rng.integers(1, min(n, 12) + 1))
            a = int(rng.integers(2, 27))
            x = rng.normal(size=length).cumsum()
            table = list(breakpoints(a))
            assert sax_transform(x, SaxParams(n, w, a)) == brute_force_sax(x, n, w, a, table)


class TestBagOfWords:
    def test_counts(self):
        assert bag_of_words(["ab", "ab", "ba"]) == Counter({"ab": 2, "ba": 1})

    def test_empty(self):
        assert bag_of_words([]) == Counter()

    def test_merge_identity(self):
        h = bag_of_words(["ab", "cc"])
        assert merge(h, Counter()) == h

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from(["aa", "ab", "ba", "bb", "ca"]), max_size=30), st.randoms())
    def test_permutation_invariance(self, words, rnd):
        shuffled = list(words)
        rnd.shuffle(shuffled)
        assert bag_of_words(words) == bag_of_words(shuffled)

    def test_count_total(self):
        x = np.random.default_rng(4).normal(size=40)
        h = bag_of_words(sax_transform(x, SaxParams(8, 4, 4)))
        assert sum(h.values()) == 33

    def test_text_round_trip(self):
        h = Counter({"ba": 1, "ab": 2, "0:cc": 5})
        text = histogram_to_text(h)
        assert text == "0:cc\t5\nab\t2\nba\t1\n"
        assert histogram_from_text(text) == h

    def test_multi_map_prefixes(self):
        rng = np.random.default_rng(5)
        maps = [rng.normal(size=20), rng.normal(size=20)]
        h = multi_map_bag(maps, SaxParams(5, 2, 3))
        assert sum(h.values()) == 2 * 16
        assert {k.split(":")[0] for k in h} == {"0", "1"}
