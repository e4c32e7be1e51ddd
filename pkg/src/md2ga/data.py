"""Synthetic skeletal motion, the CSV interchange format, and splitting.

CSV layout, one row per (sequence, frame, joint)::

    seq_id,frame,joint,coord_0,...,coord_{D-1}

``seq_id`` and ``joint`` are 0-based, ``frame`` is 1-based over the full
``T_p + T_f`` timeline. A JSON manifest next to the CSV
(``<name>.manifest.json``) records the shapes, labels, generator config
and a checksum of the values.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

CSV_FORMAT = "md2ga-motion-csv"
CSV_VERSION = 1


class DataFormatError(ValueError):
    pass


class CsvParseError(DataFormatError):
    pass


@dataclass
class SyntheticConfig:
    J: int = 8
    D: int = 3
    T_p: int = 10
    T_f: int = 10
    count: int = 640
    freq_low: float = 0.5
    freq_high: float = 1.5
    amp_low: float = 0.5
    amp_high: float = 1.5
    noise_std: float = 0.01
    n_classes: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.freq_low > self.freq_high:
            raise ValueError("freq_low must not exceed freq_high")
        if self.amp_low > self.amp_high:
            raise ValueError("amp_low must not exceed amp_high")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if self.n_classes < 1:
            raise ValueError("n_classes must be at least 1")

    @property
    def length(self) -> int:
        return self.T_p + self.T_f

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    labels: np.ndarray | None = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.ndim != 4 or self.Y.ndim != 4:
            raise DataFormatError("X and Y must be (count, frames, joints, dims) arrays")
        if self.X.shape[0] != self.Y.shape[0] or self.X.shape[2:] != self.Y.shape[2:]:
            raise DataFormatError(f"X {self.X.shape} and Y {self.Y.shape} disagree")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def T_p(self) -> int:
        return self.X.shape[1]

    @property
    def T_f(self) -> int:
        return self.Y.shape[1]

    @property
    def J(self) -> int:
        return self.X.shape[2]

    @property
    def D(self) -> int:
        return self.X.shape[3]

    @property
    def sequences(self) -> list:
        return list(zip(self.X, self.Y))

    @property
    def G(self) -> np.ndarray:
        return np.concatenate([self.X, self.Y], axis=1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        manifest = {k: v for k, v in self.manifest.items() if k != "phase_shifts"}
        return Dataset(self.X[idx], self.Y[idx], labels, manifest)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.Y, dtype="<f8").tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()

    def equals(self, other: "Dataset") -> bool:
        if (self.labels is None) != (other.labels is None):
            return False
        same_labels = self.labels is None or np.array_equal(self.labels, other.labels)
        return (self.X.shape == other.X.shape and self.Y.shape == other.Y.shape
                and np.array_equal(self.X, other.X) and np.array_equal(self.Y, other.Y)
                and same_labels)


def archetypes(cfg: SyntheticConfig) -> dict:
    """Per-class motion parameters: frequency, phases, amplitudes, offsets."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    C, J, D = cfg.n_classes, cfg.J, cfg.D
    return {
        "freq": rng.uniform(cfg.freq_low, cfg.freq_high, size=C),
        "phase": rng.uniform(0.0, 2 * np.pi, size=(C, J, D)),
        "amp": rng.uniform(cfg.amp_low, cfg.amp_high, size=(C, J, D)),
        "offset": rng.uniform(-1.0, 1.0, size=(C, J, D)),
    }


def render(cfg: SyntheticConfig, arch: dict, label: int, shift: float) -> np.ndarray:
    """Noise-free ``(T, J, D)`` sequence of one class at a given phase shift."""
    t = np.arange(1, cfg.length + 1, dtype=np.float64)[:, None, None]
    theta = 2 * np.pi * arch["freq"][label] * t / cfg.length
    return arch["amp"][label] * np.sin(theta + arch["phase"][label] + shift) + arch["offset"][label]


def gen_synthetic(cfg: SyntheticConfig) -> Dataset:
    arch = archetypes(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    labels = rng.integers(0, cfg.n_classes, size=cfg.count)
    shifts = rng.uniform(0.0, 2 * np.pi, size=cfg.count)
    noise = rng.normal(0.0, 1.0, size=(cfg.count, cfg.length, cfg.J, cfg.D)) * cfg.noise_std
    seqs = np.stack([render(cfg, arch, int(c), s) for c, s in zip(labels, shifts)]) + noise
    manifest = {"generator": asdict(cfg), "phase_shifts": shifts.tolist()}
    return Dataset(seqs[:, :cfg.T_p], seqs[:, cfg.T_p:], labels, manifest)


def zero_velocity_baseline(X, T_f: int) -> np.ndarray:
    """Repeat the last observed frame ``T_f`` times."""
    if T_f < 1:
        raise ValueError("T_f must be at least 1")
    X = np.asarray(X, dtype=np.float64)
    last = X[..., -1:, :, :]
    reps = [1] * X.ndim
    reps[-3] = T_f
    return np.tile(last, reps)


def split(ds: Dataset, fractions=(0.8, 0.2, 0.0), seed=0):
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be nonnegative and sum to 1, got {fractions}")
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    cuts, acc = [], 0
    for f in fractions[:-1]:
        acc += int(round(f * n))
        cuts.append(min(acc, n))
    return tuple(ds.subset(part) for part in np.split(perm, cuts))


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def save_csv(ds: Dataset, path):
    path = Path(path)
    n, T_p, J, D = ds.X.shape
    seqs = ds.G
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seq_id", "frame", "joint"] + [f"coord_{d}" for d in range(D)])
        for s in range(n):
            for t in range(seqs.shape[1]):
                for j in range(J):
                    w.writerow([s, t + 1, j] + [repr(float(v)) for v in seqs[s, t, j]])
    os.replace(tmp, path)
    manifest = {
        "format": CSV_FORMAT,
        "version": CSV_VERSION,
        "count": n,
        "T_p": T_p,
        "T_f": ds.T_f,
        "J": J,
        "D": D,
        "labels": None if ds.labels is None else ds.labels.tolist(),
        "generator": ds.manifest.get("generator"),
        "checksum": ds.checksum(),
    }
    mtmp = manifest_path(path).with_suffix(".tmp")
    with open(mtmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(mtmp, manifest_path(path))


def load_csv(path) -> Dataset:
    path = Path(path)
    try:
        with open(manifest_path(path), encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"missing manifest {manifest_path(path)}") from None
    if manifest.get("format") != CSV_FORMAT:
        raise DataFormatError(f"{manifest_path(path)}: not a {CSV_FORMAT} manifest")
    n, T_p, T_f, J, D = (int(manifest[k]) for k in ("count", "T_p", "T_f", "J", "D"))
    T = T_p + T_f
    seqs = np.zeros((n, T, J, D))
    seen = np.zeros((n, T, J), dtype=bool)
    expected_header = ["seq_id", "frame", "joint"] + [f"coord_{d}" for d in range(D)]
    rows = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise CsvParseError(f"{path}:1: expected header {expected_header}, got {header}")
        for row in reader:
            line = reader.line_num
            if len(row) != 3 + D:
                raise CsvParseError(f"{path}:{line}: expected {3 + D} fields, got {len(row)}")
            try:
                s, t, j = int(row[0]), int(row[1]) - 1, int(row[2])
                coords = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise CsvParseError(f"{path}:{line}: {exc}") from None
            if not (0 <= s < n and 0 <= t < T and 0 <= j < J):
                raise CsvParseError(f"{path}:{line}: index ({row[0]},{row[1]},{row[2]}) "
                                    f"outside manifest shape")
            if seen[s, t, j]:
                raise CsvParseError(f"{path}:{line}: duplicate row for ({s},{t + 1},{j})")
            seen[s, t, j] = True
            seqs[s, t, j] = coords
            rows += 1
    if rows != n * T * J:
        raise CsvParseError(f"{path}: expected {n * T * J} data rows, found {rows} "
                            f"(file truncated?)")
    labels = manifest.get("labels")
    ds = Dataset(seqs[:, :T_p], seqs[:, T_p:], labels,
                 {"generator": manifest.get("generator")})
    if manifest.get("checksum") and ds.checksum() != manifest["checksum"]:
        raise DataFormatError(f"{path}: values do not match the manifest checksum")
    return ds
