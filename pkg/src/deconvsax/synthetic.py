"""Small synthetic multivariate datasets for demos and end-to-end tests.

``ecg_like`` mimics two-lead heartbeats of varying length (normal beats vs.
beats with a widened QRS complex and an inverted T wave); ``wafer_like``
mimics six-sensor process traces whose abnormal runs carry a drifting plateau.
Neither is a substitute for the real benchmark data.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_native


def _bump(t: np.ndarray, center: float, width: float, height: float) -> np.ndarray:
    return height * np.exp(-0.5 * ((t - center) / width) ** 2)


def _ecg_beat(rng: np.random.Generator, length: int, abnormal: bool) -> np.ndarray:
    t = np.linspace(0.0, 1.0, length)
    jitter = rng.normal(0.0, 0.015, size=5)
    qrs_w = 0.045 if abnormal else 0.018
    t_height = -0.25 if abnormal else 0.35
    waves = [
        (0.18 + jitter[0], 0.035, 0.12),
        (0.38 + jitter[1], 0.012, -0.15),
        (0.42 + jitter[2], qrs_w, 1.0 * rng.uniform(0.85, 1.15)),
        (0.46 + jitter[3], 0.012, -0.2),
        (0.70 + jitter[4], 0.06, t_height * rng.uniform(0.8, 1.2)),
    ]
    lead = sum(_bump(t, c, w, h) for c, w, h in waves)
    baseline = rng.normal(0.0, 0.05) + rng.normal(0.0, 0.03) * np.sin(2 * np.pi * rng.uniform(0.3, 1.0) * t)
    mix = rng.uniform(0.5, 0.9)
    second = mix * lead + (1 - mix) * np.roll(lead, max(1, length // 25))
    noise = rng.normal(0.0, 0.03, size=(2, length))
    return np.stack([lead + baseline, 0.8 * second - 0.3 * baseline]) + noise


def _wafer_run(rng: np.random.Generator, length: int, abnormal: bool) -> np.ndarray:
    t = np.linspace(0.0, 1.0, length)
    ramp = np.clip((t - 0.1) / 0.1, 0.0, 1.0) * np.clip((0.9 - t) / 0.1, 0.0, 1.0)
    gains = np.array([1.0, 0.6, -0.8, 0.4, 1.2, -0.5])
    out = gains[:, None] * ramp[None, :]
    out += 0.15 * np.sin(2 * np.pi * np.arange(1, 7)[:, None] * t[None, :] * 2)
    if abnormal:
        start = rng.uniform(0.3, 0.6)
        drift = np.clip((t - start) / 0.15, 0.0, 1.0) * rng.uniform(0.3, 0.6)
        out[rng.choice(6, size=2, replace=False)] += drift
    return out + rng.normal(0.0, 0.05, size=out.shape)


GENERATORS = {
    "ecg_like": (_ecg_beat, 2, (39, 153)),
    "wafer_like": (_wafer_run, 6, (104, 198)),
}


def make_samples(kind: str, n_train: int, n_test: int, seed: int = 0,
                 abnormal_fraction: float = 1 / 3) -> list[tuple[str, np.ndarray, str, str]]:
    """Return native-format records ``(filename, values, label, split)``."""
    try:
        gen, _, (lo, hi) = GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {sorted(GENERATORS)}") from None
    rng = np.random.default_rng(seed)
    records = []
    for split, count in (("train", n_train), ("test", n_test)):
        n_abn = int(round(abnormal_fraction * count))
        labels = np.array([1] * n_abn + [-1] * (count - n_abn))
        rng.shuffle(labels)
        for i, lab in enumerate(labels):
            length = int(rng.integers(lo, hi + 1))
            values = gen(rng, length, lab == 1)
            records.append((f"{split}_{i:04d}.txt", values, str(int(lab)), split))
    return records


def write_synthetic(root, kind: str = "ecg_like", n_train: int = 60, n_test: int = 60, seed: int = 0) -> Path:
    return write_native(root, make_samples(kind, n_train, n_test, seed))
