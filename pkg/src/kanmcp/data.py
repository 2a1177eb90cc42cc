"""Multimodal datasets: synthetic generation, CSV interchange, minibatching.

On-disk layout of a dataset directory::

    text.csv  audio.csv  visual.csv   one sample per row, header row of column names
    labels.csv                        single column "y", values in [-3, 3]
    manifest                          key=value lines: n, d_t, d_a, d_v
                                      (optional n_train, n_val, n_test)

Rows are aligned across files.  When the manifest carries no split sizes the
rows are split contiguously 70/10/20 into train/val/test.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadSpec,
    EmptySequence,
    IoError,
    LabelRangeError,
    MissingFile,
    MissingModality,
    ParseError,
    RowCountMismatch,
    ShapeMismatch,
)

MODALITIES = ("t", "a", "v")
FILES = {"t": "text.csv", "a": "audio.csv", "v": "visual.csv"}
LABEL_LIMIT = 3.0
LABEL_FUNCTIONS = ("additive", "text-dominant", "balanced")
DEFAULT_SNR = {
    "additive": (1.0, 1.0, 1.0),
    "text-dominant": (3.0, 0.0, 0.0),
    "balanced": (1.0, 1.0, 1.0),
}
SPLIT = (0.7, 0.1, 0.2)


@dataclass
class ModalityBatch:
    features: dict
    y: np.ndarray

    def __post_init__(self):
        missing = [m for m in MODALITIES if m not in self.features]
        if missing:
            raise MissingModality(f"missing modalities: {','.join(missing)}")
        self.features = {m: np.asarray(self.features[m], dtype=float) for m in MODALITIES}
        self.y = np.asarray(self.y, dtype=float).ravel()
        rows = {m: f.shape[0] for m, f in self.features.items()}
        if any(f.ndim != 2 for f in self.features.values()):
            raise ShapeMismatch("feature blocks must be 2-D")
        if len(set(rows.values())) != 1 or self.y.size != rows["t"]:
            raise RowCountMismatch(f"row counts differ: {rows}, labels {self.y.size}")
        if np.any(np.abs(self.y) > LABEL_LIMIT):
            raise LabelRangeError(f"labels must lie in [-{LABEL_LIMIT:g}, {LABEL_LIMIT:g}]")

    def __len__(self):
        return self.y.size

    @property
    def dims(self):
        return {m: self.features[m].shape[1] for m in MODALITIES}

    def subset(self, idx):
        return ModalityBatch({m: f[idx] for m, f in self.features.items()}, self.y[idx])


@dataclass
class Dataset:
    train: ModalityBatch
    val: ModalityBatch
    test: ModalityBatch
    stats: dict = field(default_factory=dict)

    def split(self, name):
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    @property
    def dims(self):
        return self.train.dims


def temporal_average(seq):
    """Column-wise mean over the time axis (axis 0 for ``T x d``; axis -2 for stacks)."""
    seq = np.asarray(seq, dtype=float)
    if seq.ndim < 2 or seq.shape[-2] == 0:
        raise EmptySequence("sequence has no time steps")
    return seq.mean(axis=-2)


# ---------------------------------------------------------------- standardisation


def fit_stats(batch):
    stats = {}
    for m in MODALITIES:
        f = batch.features[m]
        sd = f.std(axis=0)
        stats[m] = (f.mean(axis=0), np.where(sd > 0, sd, 1.0))
    return stats


def apply_stats(batch, stats):
    feats = {}
    for m in MODALITIES:
        mean, sd = stats[m]
        if mean.shape[0] != batch.features[m].shape[1]:
            raise ShapeMismatch(f"stats for {m!r} have {mean.shape[0]} columns")
        feats[m] = (batch.features[m] - mean) / sd
    return ModalityBatch(feats, batch.y)


def standardize(dataset, stats=None):
    """Z-score every split with training-set statistics (or the given ones)."""
    stats = fit_stats(dataset.train) if stats is None else stats
    return Dataset(
        apply_stats(dataset.train, stats),
        apply_stats(dataset.val, stats),
        apply_stats(dataset.test, stats),
        stats,
    )


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SynthSpec:
    n: int = 2000
    d_t: int = 8
    d_a: int = 8
    d_v: int = 8
    snr_t: float | None = None
    snr_a: float | None = None
    snr_v: float | None = None
    label_fn: str = "balanced"
    seq_len: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.label_fn not in LABEL_FUNCTIONS:
            raise BadSpec(f"label_fn must be one of {', '.join(LABEL_FUNCTIONS)}")
        if self.n < 10:
            raise BadSpec("n must be >= 10")
        if min(self.d_t, self.d_a, self.d_v) < 1:
            raise BadSpec("feature dims must be >= 1")
        if self.seq_len < 1:
            raise BadSpec("seq_len must be >= 1")
        if any(s < 0 for s in self.snrs.values()):
            raise BadSpec("SNRs must be >= 0")

    @property
    def snrs(self):
        default = DEFAULT_SNR[self.label_fn]
        given = (self.snr_t, self.snr_a, self.snr_v)
        return {m: float(d if g is None else g) for m, g, d in zip(MODALITIES, given, default)}

    @property
    def dims(self):
        return {"t": self.d_t, "a": self.d_a, "v": self.d_v}


def read_keyvalue(path):
    """Parse ``key = value`` lines with ``#`` comments into an ordered dict of strings."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise MissingFile(f"{path} not found") from None
    except OSError as exc:
        raise IoError(f"{path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(path, lineno, 1, "expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError(path, lineno, 1, "empty key")
        out[key] = value
    return out


def synth_spec_from_file(path):
    raw = read_keyvalue(path)
    fields = SynthSpec.__dataclass_fields__
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise BadSpec(f"unknown spec key {key!r}")
        try:
            if key == "label_fn":
                kwargs[key] = value
            elif key.startswith("snr"):
                kwargs[key] = float(value)
            else:
                kwargs[key] = int(value)
        except ValueError:
            raise BadSpec(f"bad value for {key!r}: {value!r}") from None
    return SynthSpec(**kwargs)


def _embedding(rng, d):
    """Fixed map z -> R^d: a linear direction plus a weaker orthogonal sinusoid, unit mean-square per coordinate."""
    u = rng.standard_normal(d)
    w = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    if d > 1:
        w -= (w @ u) * u
        w /= np.linalg.norm(w)
    else:
        w = u.copy()
    scale = math.sqrt(d)
    # E[(sqrt3 z)^2] = E[(sqrt2 sin pi z)^2] = 1 for z ~ U[-1, 1]
    return lambda z: scale * (np.outer(math.sqrt(3) * z, u) + 0.5 * np.outer(math.sqrt(2) * np.sin(np.pi * z), w)) / math.sqrt(1.25)


def synth_generate(spec):
    """Deterministic synthetic dataset; returns a 70/10/20 :class:`Dataset` (unstandardised).

    Each modality observes ``embed_m(z_m) * snr_m + noise`` with unit Gaussian
    noise, where ``z_m`` is the latent sentiment scaled to [-1, 1].  For
    ``additive`` every modality sees its own latent and the label is their sum.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    if spec.label_fn == "additive":
        latents = {m: rng.uniform(-1.0, 1.0, n) for m in MODALITIES}
        y = sum(latents[m] for m in MODALITIES)
    else:
        s = rng.uniform(-LABEL_LIMIT, LABEL_LIMIT, n)
        latents = {m: s / LABEL_LIMIT for m in MODALITIES}
        y = s
    feats = {}
    snrs = spec.snrs
    for m in MODALITIES:
        d = spec.dims[m]
        embed = _embedding(rng, d)
        signal = embed(latents[m]) * snrs[m]
        noise = rng.standard_normal((n, spec.seq_len, d)) * math.sqrt(spec.seq_len)
        feats[m] = temporal_average(signal[:, None, :] + noise)
    y = np.clip(y, -LABEL_LIMIT, LABEL_LIMIT)
    order = rng.permutation(n)
    full = ModalityBatch({m: f[order] for m, f in feats.items()}, y[order])
    return split_dataset(full)


def split_sizes(n, fractions=SPLIT):
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return n_train, n_val, n - n_train - n_val


def split_dataset(full, sizes=None):
    n_train, n_val, n_test = sizes or split_sizes(len(full))
    if n_train + n_val + n_test != len(full) or min(n_train, n_val, n_test) < 1:
        raise BadSpec(f"split sizes {n_train}/{n_val}/{n_test} do not fit {len(full)} rows")
    idx = np.arange(len(full))
    return Dataset(
        full.subset(idx[:n_train]),
        full.subset(idx[n_train : n_train + n_val]),
        full.subset(idx[n_train + n_val :]),
    )


# ---------------------------------------------------------------- CSV interchange


def _fmt(v):
    return format(float(v), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def save_features(dataset, out_dir):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        parts = [dataset.train, dataset.val, dataset.test]
        for m in MODALITIES:
            block = np.concatenate([p.features[m] for p in parts])
            _write_csv(out / FILES[m], [f"{m}{j}" for j in range(block.shape[1])], block)
        y = np.concatenate([p.y for p in parts])
        _write_csv(out / "labels.csv", ["y"], y[:, None])
        dims = dataset.dims
        manifest = [
            f"n={y.size}",
            f"d_t={dims['t']}",
            f"d_a={dims['a']}",
            f"d_v={dims['v']}",
            f"n_train={len(dataset.train)}",
            f"n_val={len(dataset.val)}",
            f"n_test={len(dataset.test)}",
        ]
        (out / "manifest").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write dataset to {out}: {exc.strerror}") from None
    return out


def _read_csv(path, n_cols):
    if not path.exists():
        raise MissingFile(f"{path} not found")
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(path, 1, 1, "missing header row")
        if len(header) != n_cols:
            raise ParseError(path, 1, 1, f"expected {n_cols} columns, header has {len(header)}")
        for lineno, row in enumerate(reader, 2):
            if len(row) != n_cols:
                raise ParseError(path, lineno, min(len(row), n_cols) + 1, f"expected {n_cols} columns, got {len(row)}")
            values = []
            for col, cell in enumerate(row, 1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(path, lineno, col, f"not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise ParseError(path, lineno, col, f"non-finite value: {cell!r}")
                values.append(v)
            rows.append(values)
    return np.array(rows, dtype=float).reshape(len(rows), n_cols)


def load_features(data_dir, stats=None, standardize_features=True):
    """Load a dataset directory, split it and (by default) z-score it.

    ``stats`` overrides the training-split statistics, e.g. with the ones
    stored in a checkpoint.
    """
    root = Path(data_dir)
    manifest_path = root / "manifest"
    if not manifest_path.exists():
        raise MissingFile(f"{manifest_path} not found")
    raw = read_keyvalue(manifest_path)
    try:
        meta = {k: int(v) for k, v in raw.items()}
    except ValueError:
        raise ParseError(manifest_path, 1, 1, "manifest values must be integers") from None
    for key in ("n", "d_t", "d_a", "d_v"):
        if key not in meta:
            raise BadSpec(f"manifest lacks {key!r}")
    feats = {}
    for m in MODALITIES:
        path = root / FILES[m]
        block = _read_csv(path, meta[f"d_{m}"])
        if block.shape[0] != meta["n"]:
            raise RowCountMismatch(f"{FILES[m]} has {block.shape[0]} rows, manifest says {meta['n']}")
        feats[m] = block
    labels = _read_csv(root / "labels.csv", 1)
    if labels.shape[0] != meta["n"]:
        raise RowCountMismatch(f"labels.csv has {labels.shape[0]} rows, manifest says {meta['n']}")
    bad = np.flatnonzero(np.abs(labels[:, 0]) > LABEL_LIMIT)
    if bad.size:
        raise LabelRangeError(f"labels.csv line {bad[0] + 2}: label {labels[bad[0], 0]:g} outside [-3, 3]")
    full = ModalityBatch(feats, labels[:, 0])
    sizes = None
    if all(k in meta for k in ("n_train", "n_val", "n_test")):
        sizes = (meta["n_train"], meta["n_val"], meta["n_test"])
    ds = split_dataset(full, sizes)
    if not standardize_features:
        return ds
    return standardize(ds, stats)


def minibatches(batch, size, seed, epoch):
    """Shuffle keyed by ``(seed, epoch)``; the final partial batch is kept."""
    if size < 1:
        raise ValueError("batch size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(batch))
    for start in range(0, len(batch), size):
        yield batch.subset(order[start : start + size])
