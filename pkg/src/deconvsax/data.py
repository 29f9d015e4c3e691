"""Dataset loading, preprocessing and persistence.

Two on-disk input layouts are understood (see docs/formats.md):

* ``native``: one whitespace-delimited text file per sample (rows are time
  steps, columns are channels) and a ``manifest.tsv`` listing
  ``filename<TAB>label<TAB>split``.
* ``csv-manifest``: a single ``data.csv`` with header
  ``sample_id,channel,t,value,label,split``.

Preprocessing standardizes each channel with statistics pooled over every
time step of every training sample, then right-pads with zeros to the
longest series across train and test.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import FormatError, read_container, write_container

SPLIT_MAGIC = b"DCSXSPLT"
SPLIT_VERSION = 1
MANIFEST_NAME = "manifest.tsv"
CSV_NAME = "data.csv"
CSV_HEADER = ["sample_id", "channel", "t", "value", "label", "split"]


@dataclass
class Sample:
    values: np.ndarray
    label: int
    original_length: int
    name: str = ""

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass
class Dataset:
    train: list[Sample]
    test: list[Sample]
    channels: int
    padded_length: int
    name: str = ""
    channel_mean: np.ndarray | None = None
    channel_std: np.ndarray | None = None
    standardized: bool = False
    label_map: dict[str, int] = field(default_factory=dict)

    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _stack(self.train, self.channels, self.padded_length)

    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _stack(self.test, self.channels, self.padded_length)


def _stack(samples: list[Sample], c: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, c, length)), np.zeros(0, dtype=int)
    return np.stack([s.values for s in samples]), np.array([s.label for s in samples])


def map_labels(raw_labels: list[str], label_map: dict[str, int] | None = None) -> dict[str, int]:
    """Map raw labels to +1/-1.

    Labels already spelled as -1/1 keep their sign. Otherwise the two
    distinct labels are sorted (numerically when possible) and the first
    becomes -1.
    """
    distinct = sorted(set(raw_labels))
    if label_map is not None:
        unknown = [lab for lab in distinct if lab not in label_map]
        if unknown:
            raise FormatError(f"unknown label(s) {unknown}; known: {sorted(label_map)}")
        return dict(label_map)
    if len(distinct) > 2:
        raise FormatError(f"expected at most 2 classes, found {distinct}")
    try:
        numeric = {lab: float(lab) for lab in distinct}
    except ValueError:
        numeric = None
    if numeric is not None and set(numeric.values()) <= {-1.0, 1.0}:
        return {lab: int(v) for lab, v in numeric.items()}
    if numeric is not None:
        distinct.sort(key=lambda lab: numeric[lab])
    if len(distinct) == 1:
        return {distinct[0]: 1}
    return {distinct[0]: -1, distinct[1]: 1}


def _read_sample_file(path: Path) -> np.ndarray:
    rows = []
    width = None
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        if not parts:
            continue
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise FormatError(f"{path}:{lineno}: expected {width} columns, found {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no data rows")
    arr = np.array(rows).T
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite values")
    return arr


def _read_native(root: Path) -> list[tuple[str, np.ndarray, str, str]]:
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise FormatError(f"{root}: missing {MANIFEST_NAME}")
    records = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{manifest}:{lineno}: expected filename<TAB>label<TAB>split")
        fname, label, split = (p.strip() for p in parts)
        if split not in ("train", "test"):
            raise FormatError(f"{manifest}:{lineno}: split must be 'train' or 'test', got {split!r}")
        records.append((fname, _read_sample_file(root / fname), label, split))
    return records


def _read_csv(root: Path) -> list[tuple[str, np.ndarray, str, str]]:
    path = root / CSV_NAME if root.is_dir() else root
    cells: dict[str, dict[tuple[int, int], float]] = {}
    meta: dict[str, tuple[str, str]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise FormatError(f"{path}:1: header must be {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 fields, found {len(row)}")
            sid, ch, t, val, label, split = (r.strip() for r in row)
            try:
                key = (int(ch), int(t))
                v = float(val)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if key[0] < 0 or key[1] < 0 or not np.isfinite(v):
                raise FormatError(f"{path}:{lineno}: invalid channel/t/value")
            if split not in ("train", "test"):
                raise FormatError(f"{path}:{lineno}: split must be 'train' or 'test'")
            if sid in meta and meta[sid] != (label, split):
                raise FormatError(f"{path}:{lineno}: sample {sid!r} has inconsistent label/split")
            meta[sid] = (label, split)
            cells.setdefault(sid, {})[key] = v
    records = []
    for sid, cell in cells.items():
        n_ch = max(k[0] for k in cell) + 1
        n_t = max(k[1] for k in cell) + 1
        arr = np.zeros((n_ch, n_t))
        for (c, t), v in cell.items():
            arr[c, t] = v
        records.append((sid, arr, *meta[sid]))
    return records


def load_dataset(path, format: str = "native", name: str | None = None,
                 label_map: dict[str, int] | None = None) -> Dataset:
    """Read a dataset directory and apply standardization + zero padding."""
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"dataset path does not exist: {root}")
    if format == "native":
        records = _read_native(root)
    elif format in ("csv", "csv-manifest"):
        records = _read_csv(root)
    else:
        raise ValueError(f"unknown dataset format {format!r}")
    if not records:
        raise FormatError(f"{root}: no samples listed")
    channel_counts = {arr.shape[0] for _, arr, _, _ in records}
    if len(channel_counts) != 1:
        bad = next(n for n, arr, _, _ in records if arr.shape[0] != records[0][1].shape[0])
        raise FormatError(f"{root}/{bad}: ragged channel count {sorted(channel_counts)}")
    lmap = map_labels([lab for _, _, lab, _ in records], label_map)
    raw = Dataset(
        train=[Sample(arr, lmap[lab], arr.shape[1], fname) for fname, arr, lab, sp in records if sp == "train"],
        test=[Sample(arr, lmap[lab], arr.shape[1], fname) for fname, arr, lab, sp in records if sp == "test"],
        channels=channel_counts.pop(),
        padded_length=max(arr.shape[1] for _, arr, _, _ in records),
        name=name or root.name,
        label_map=lmap,
    )
    return preprocess(raw)


def preprocess(ds: Dataset) -> Dataset:
    """Standardize per channel with training statistics, then zero-pad."""
    if ds.standardized:
        raise ValueError(f"dataset {ds.name!r} is already standardized")
    if ds.train:
        pooled = np.concatenate([s.values[:, :s.original_length] for s in ds.train], axis=1)
        mean = pooled.mean(axis=1)
        std = pooled.std(axis=1)
    else:
        mean = np.zeros(ds.channels)
        std = np.ones(ds.channels)
    std = np.where(std < 1e-8, 1.0, std)
    length = max([s.original_length for s in ds.train + ds.test], default=ds.padded_length)

    def fix(s: Sample) -> Sample:
        out = np.zeros((ds.channels, length))
        out[:, :s.original_length] = (s.values[:, :s.original_length] - mean[:, None]) / std[:, None]
        return Sample(out, s.label, s.original_length, s.name)

    return Dataset(
        train=[fix(s) for s in ds.train],
        test=[fix(s) for s in ds.test],
        channels=ds.channels,
        padded_length=length,
        name=ds.name,
        channel_mean=mean,
        channel_std=std,
        standardized=True,
        label_map=dict(ds.label_map),
    )


def apply_standardization(values: np.ndarray, ds: Dataset, length: int | None = None) -> np.ndarray:
    """Preprocess a new raw (C, T) series exactly as the stored split was."""
    if ds.channel_mean is None or ds.channel_std is None:
        raise ValueError("dataset carries no normalization statistics")
    values = np.asarray(values, dtype=np.float64)
    length = length or ds.padded_length
    if values.shape[0] != ds.channels or values.shape[1] > length:
        raise ValueError(f"series shaped {values.shape} does not fit ({ds.channels}, <= {length})")
    out = np.zeros((ds.channels, length))
    out[:, :values.shape[1]] = (values - ds.channel_mean[:, None]) / ds.channel_std[:, None]
    return out


def save_split(ds: Dataset, path) -> None:
    arrays = {}
    for part in ("train", "test"):
        samples = getattr(ds, part)
        values, labels = _stack(samples, ds.channels, ds.padded_length)
        arrays[f"{part}_values"] = values
        arrays[f"{part}_labels"] = labels.astype(np.int64)
        arrays[f"{part}_lengths"] = np.array([s.original_length for s in samples], dtype=np.int64)
    if ds.channel_mean is not None:
        arrays["channel_mean"] = ds.channel_mean
        arrays["channel_std"] = ds.channel_std
    meta = {
        "name": ds.name,
        "channels": ds.channels,
        "padded_length": ds.padded_length,
        "standardized": ds.standardized,
        "label_map": ds.label_map,
        "train_names": [s.name for s in ds.train],
        "test_names": [s.name for s in ds.test],
    }
    write_container(path, SPLIT_MAGIC, SPLIT_VERSION, meta, arrays)


def load_split(path) -> Dataset:
    meta, arrays = read_container(path, SPLIT_MAGIC, SPLIT_VERSION)
    try:
        c, length = int(meta["channels"]), int(meta["padded_length"])
        parts = {}
        for part in ("train", "test"):
            values = arrays[f"{part}_values"]
            labels = arrays[f"{part}_labels"]
            lengths = arrays[f"{part}_lengths"]
            names = meta[f"{part}_names"]
            if values.shape != (len(labels), c, length) or len(lengths) != len(labels) or len(names) != len(labels):
                raise FormatError(f"{path}: {part} arrays are inconsistent")
            parts[part] = [Sample(values[i], int(labels[i]), int(lengths[i]), names[i]) for i in range(len(labels))]
        return Dataset(
            train=parts["train"],
            test=parts["test"],
            channels=c,
            padded_length=length,
            name=meta["name"],
            channel_mean=arrays.get("channel_mean"),
            channel_std=arrays.get("channel_std"),
            standardized=bool(meta["standardized"]),
            label_map={k: int(v) for k, v in meta["label_map"].items()},
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing field {exc}") from exc


def write_native(root, samples: list[tuple[str, np.ndarray, str, str]]) -> Path:
    """Write ``(filename, values (C, T), label, split)`` records in the native layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for fname, values, label, split in samples:
        np.savetxt(root / fname, np.asarray(values).T, fmt="%.10g")
        lines.append(f"{fname}\t{label}\t{split}")
    (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return root


_CMU_NAME = re.compile(r"^(?P<stem>.+)\.(?P<channel>\d+)$")


def import_cmu(src, dst, n_train: int, seed: int = 0) -> Path:
    """Convert the CMU ``normal/`` + ``abnormal/`` per-channel layout to native.

    Each raw file ``<stem>.<channel>`` holds ``time value`` rows; files sharing a
    stem form one sample, channels ordered by their numeric suffix. The
    train/test split is stratified and drawn with ``seed``.
    """
    src = Path(src)
    groups: dict[tuple[str, str], dict[int, Path]] = {}
    for label in ("normal", "abnormal"):
        sub = src / label
        if not sub.is_dir():
            raise FormatError(f"{src}: missing {label}/ directory")
        for f in sorted(sub.iterdir()):
            m = _CMU_NAME.match(f.name)
            if m and f.is_file():
                groups.setdefault((label, m["stem"]), {})[int(m["channel"])] = f
    if not groups:
        raise FormatError(f"{src}: no sample files found")
    widths = {tuple(sorted(chs)) for chs in groups.values()}
    if len(widths) != 1:
        raise FormatError(f"{src}: samples have differing channel sets {sorted(widths)}")
    records = []
    for (label, stem), chs in sorted(groups.items()):
        series = []
        for ch in sorted(chs):
            arr = _read_sample_file(chs[ch])
            series.append(arr[-1])
        n = min(len(s) for s in series)
        records.append((f"{label}_{stem}.txt", np.stack([s[:n] for s in series]), label))
    rng = np.random.default_rng(seed)
    labels = np.array([r[2] for r in records])
    frac = n_train / len(records)
    is_train = np.zeros(len(records), dtype=bool)
    for lab in sorted(set(labels)):
        idx = np.flatnonzero(labels == lab)
        k = int(round(frac * len(idx)))
        is_train[rng.permutation(idx)[:k]] = True
    # fix rounding so exactly n_train samples land in train
    diff = n_train - int(is_train.sum())
    pool = np.flatnonzero(~is_train if diff > 0 else is_train)
    is_train[rng.permutation(pool)[:abs(diff)]] = diff > 0
    return write_native(
        dst,
        [(f, v, "1" if lab == "abnormal" else "-1", "train" if tr else "test")
         for (f, v, lab), tr in zip(records, is_train)],
    )
