"""File formats and in-memory containers for features, labels, codes, and models.

Binary layouts (all integers little-endian):

  features "BHF1": magic, u32 n, u32 D, then n*D float32 values, row-major.
  codes    "BHC1": magic, u32 n, u32 K, then n records of ceil(K/8) bytes.
           Bit j of a sample lives in byte j//8 at bit position j%8 (LSB
           first); a set bit encodes +1, a clear bit -1; padding bits in the
           last byte of a record are zero.
  model    "BHM1": magic, u32 D, u32 K, u8 regularizer id (0=so, 1=dso,
           2=mc), f64 alpha, f64 beta, then D f64 mean, D*K f64 projection
           (row-major), K*K f64 rotation (row-major).

Text formats:

  labels:       one line per sample, comma-separated non-negative integers.
  csv features: comma-separated decimal floats, one row per line, no header.

Features are stored as float32 on disk and promoted to float64 in memory;
models are stored at full float64 precision so they round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .hashcore import HashModel

FEATURE_MAGIC = b"BHF1"
CODE_MAGIC = b"BHC1"
MODEL_MAGIC = b"BHM1"

REGULARIZER_IDS = {"so": 0, "dso": 1, "mc": 2}
REGULARIZER_NAMES = {v: k for k, v in REGULARIZER_IDS.items()}


class FormatError(ValueError):
    """Malformed file content; the message carries a byte offset or line number."""


@dataclass(frozen=True)
class FeatureMatrix:
    """An n x D matrix of sample feature vectors with centering metadata."""

    data: np.ndarray
    centered: bool = False
    mean: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"feature matrix must be 2-D with n >= 1, D >= 1, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature matrix contains non-finite entries")
        mean = self.mean
        if mean is None:
            mean = np.zeros(data.shape[1])
        mean = np.asarray(mean, dtype=np.float64)
        if mean.shape != (data.shape[1],):
            raise ValueError(f"mean length {mean.shape} does not match D={data.shape[1]}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mean", mean)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelSet:
    """Per-sample sets of non-negative integer class ids (singletons for single-label data)."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(frozenset(int(v) for v in s) for s in self.labels)
        if len(labels) < 1:
            raise ValueError("label set must cover at least one sample")
        for i, s in enumerate(labels):
            if not s:
                raise ValueError(f"sample {i} has an empty label set")
            if any(v < 0 for v in s):
                raise ValueError(f"sample {i} has a negative label id")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    def is_single_label(self) -> bool:
        return all(len(s) == 1 for s in self.labels)


@dataclass(frozen=True)
class BinaryCodeMatrix:
    """An n x K matrix over {-1, +1}."""

    signs: np.ndarray

    def __post_init__(self):
        signs = np.asarray(self.signs, dtype=np.float64)
        if signs.ndim != 2:
            raise ValueError(f"code matrix must be 2-D, got shape {signs.shape}")
        if not np.all(np.abs(signs) == 1.0):
            raise ValueError("code matrix entries must be exactly -1 or +1")
        object.__setattr__(self, "signs", signs)

    @property
    def n(self) -> int:
        return self.signs.shape[0]

    @property
    def nbits(self) -> int:
        return self.signs.shape[1]


@dataclass(frozen=True)
class PackedCodes:
    """Bit-packed sign codes: one record of ceil(nbits/8) bytes per sample."""

    packed: np.ndarray
    nbits: int

    def __post_init__(self):
        packed = np.asarray(self.packed, dtype=np.uint8)
        if packed.ndim != 2 or packed.shape[1] != (self.nbits + 7) // 8:
            raise ValueError(
                f"packed shape {packed.shape} inconsistent with nbits={self.nbits}"
            )
        object.__setattr__(self, "packed", packed)

    @property
    def n(self) -> int:
        return self.packed.shape[0]


def load_features(path, fmt: str = "binary") -> FeatureMatrix:
    """Read a feature file; returns an uncentered matrix with a zero mean vector."""
    if fmt == "binary":
        return _load_features_binary(path)
    if fmt == "csv":
        return _load_features_csv(path)
    raise ValueError(f"unknown feature format {fmt!r}")


def _load_features_binary(path) -> FeatureMatrix:
    blob = Path(path).read_bytes()
    header = struct.calcsize("<4sII")
    if len(blob) < header:
        raise FormatError(f"{path}: header truncated at byte {len(blob)}, need {header}")
    magic, n, dim = struct.unpack_from("<4sII", blob, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected {FEATURE_MAGIC!r}")
    if n < 1 or dim < 1:
        raise FormatError(f"{path}: header declares n={n}, D={dim}; both must be >= 1")
    expected = header + 4 * n * dim
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload ends at byte {len(blob)}, header n={n}, D={dim} implies {expected}"
        )
    raw = np.frombuffer(blob, dtype="<f4", offset=header).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(raw))
    if bad.size:
        raise FormatError(f"{path}: non-finite value at byte {header + 4 * int(bad[0])}")
    return FeatureMatrix(raw.reshape(n, dim))


def _load_features_csv(path) -> FeatureMatrix:
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line == "" and width is not None:
                continue  # tolerate a trailing blank line
            parts = line.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise FormatError(f"{path}: line {lineno} has {len(parts)} fields, expected {width}")
            try:
                row = [float(p) for p in parts]
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
            if not all(np.isfinite(row)):
                raise FormatError(f"{path}: line {lineno} contains a non-finite value")
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: empty csv")
    return FeatureMatrix(np.array(rows, dtype=np.float64))


def save_features(features: FeatureMatrix, path, fmt: str = "binary") -> None:
    if fmt == "binary":
        header = struct.pack("<4sII", FEATURE_MAGIC, features.n, features.dim)
        Path(path).write_bytes(header + features.data.astype("<f4").tobytes())
    elif fmt == "csv":
        lines = (",".join(repr(float(v)) for v in row) for row in features.data)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown feature format {fmt!r}")


def center(features: FeatureMatrix) -> FeatureMatrix:
    """Subtract column means; records them so queries can be centered identically."""
    if features.centered:
        raise ValueError("features are already centered")
    mean = features.data.mean(axis=0)
    return FeatureMatrix(features.data - mean, centered=True, mean=mean)


def apply_center(features: FeatureMatrix, mean) -> FeatureMatrix:
    """Subtract a given mean vector (typically the one recorded at training time)."""
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (features.dim,):
        raise ValueError(f"mean length {mean.shape[0] if mean.ndim == 1 else mean.shape} != D={features.dim}")
    return FeatureMatrix(features.data - mean, centered=True, mean=mean)


def load_labels(path) -> LabelSet:
    sets = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line == "":
                raise FormatError(f"{path}: line {lineno} is empty; every sample needs at least one label")
            try:
                sets.append(frozenset(int(tok) for tok in line.split(",")))
            except ValueError:
                raise FormatError(f"{path}: line {lineno} is not comma-separated integers") from None
            if any(v < 0 for v in sets[-1]):
                raise FormatError(f"{path}: line {lineno} contains a negative label id")
    if not sets:
        raise FormatError(f"{path}: empty label file")
    return LabelSet(tuple(sets))


def save_labels(labels: LabelSet, path) -> None:
    lines = (",".join(str(v) for v in sorted(s)) for s in labels.labels)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def pack_codes(codes: BinaryCodeMatrix) -> PackedCodes:
    """Pack a sign matrix LSB-first; +1 becomes a set bit, padding stays zero."""
    bits = (codes.signs > 0).astype(np.uint8)
    return PackedCodes(np.packbits(bits, axis=1, bitorder="little"), codes.nbits)


def unpack_codes(packed: PackedCodes) -> BinaryCodeMatrix:
    bits = np.unpackbits(packed.packed, axis=1, count=packed.nbits, bitorder="little")
    return BinaryCodeMatrix(bits.astype(np.float64) * 2.0 - 1.0)


def save_codes(packed: PackedCodes, path) -> None:
    header = struct.pack("<4sII", CODE_MAGIC, packed.n, packed.nbits)
    Path(path).write_bytes(header + packed.packed.tobytes())


def load_codes(path) -> PackedCodes:
    blob = Path(path).read_bytes()
    header = struct.calcsize("<4sII")
    if len(blob) < header:
        raise FormatError(f"{path}: header truncated at byte {len(blob)}, need {header}")
    magic, n, nbits = struct.unpack_from("<4sII", blob, 0)
    if magic != CODE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected {CODE_MAGIC!r}")
    if n < 1 or nbits < 1:
        raise FormatError(f"{path}: header declares n={n}, K={nbits}; both must be >= 1")
    nbytes = (nbits + 7) // 8
    expected = header + n * nbytes
    if len(blob) != expected:
        raise FormatError(f"{path}: payload ends at byte {len(blob)}, header implies {expected}")
    packed = np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(n, nbytes).copy()
    if nbits % 8:
        pad_mask = np.uint8(0xFF << (nbits % 8) & 0xFF)
        bad = np.flatnonzero(packed[:, -1] & pad_mask)
        if bad.size:
            raise FormatError(f"{path}: nonzero padding bits in record {int(bad[0])}")
    return PackedCodes(packed, nbits)


def save_model(model: "HashModel", path) -> None:
    cfg = model.config
    header = struct.pack(
        "<4sIIBdd",
        MODEL_MAGIC,
        model.dim,
        model.bits,
        REGULARIZER_IDS[cfg.regularizer],
        cfg.alpha,
        cfg.beta,
    )
    payload = (
        model.mean.astype("<f8").tobytes()
        + model.projection.astype("<f8").tobytes()
        + model.rotation.astype("<f8").tobytes()
    )
    Path(path).write_bytes(header + payload)


def load_model(path) -> "HashModel":
    from .hashcore import HashModel, TrainConfig  # deferred: hashcore imports this module

    blob = Path(path).read_bytes()
    header = struct.calcsize("<4sIIBdd")
    if len(blob) < header:
        raise FormatError(f"{path}: header truncated at byte {len(blob)}, need {header}")
    magic, dim, bits, reg_id, alpha, beta = struct.unpack_from("<4sIIBdd", blob, 0)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected {MODEL_MAGIC!r}")
    if reg_id not in REGULARIZER_NAMES:
        raise FormatError(f"{path}: unknown regularizer id {reg_id}")
    expected = header + 8 * (dim + dim * bits + bits * bits)
    if len(blob) != expected:
        raise FormatError(f"{path}: payload ends at byte {len(blob)}, header implies {expected}")
    vals = np.frombuffer(blob, dtype="<f8", offset=header)
    mean = vals[:dim].copy()
    w = vals[dim : dim + dim * bits].reshape(dim, bits).copy()
    r = vals[dim + dim * bits :].reshape(bits, bits).copy()
    if not np.all(np.isfinite(vals)):
        raise FormatError(f"{path}: corrupted payload (non-finite values)")
    config = TrainConfig(bits=bits, alpha=alpha, beta=beta, regularizer=REGULARIZER_NAMES[reg_id])
    model = HashModel(projection=w, rotation=r, mean=mean, config=config)
    model.validate()
    return model
