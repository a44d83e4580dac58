"""Point clouds, file formats and dataset manifests.

Two on-disk formats are supported:

* ``xyz-ascii``: one ``x y z`` triple per line, whitespace separated. Blank
  lines and lines starting with ``#`` are skipped.
* ``pcb-binary``: 16-byte header (magic ``b"PCB1"``, u32 count, u32 flags,
  u32 reserved) followed by ``count * 3`` little-endian float32 values.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import atomic_write_bytes
from .errors import ContractViolation, EmptyInputError, ParseError

PCB_MAGIC = b"PCB1"
# magic, count, flags, reserved (zero) -> 16 bytes
_PCB_HEADER = struct.Struct("<4sIII")
FORMATS = ("xyz-ascii", "pcb-binary")


@dataclass
class Transform:
    """Normalization record: normalized = (raw - center) * scale."""

    center: np.ndarray
    scale: float

    def apply(self, points):
        return (np.asarray(points) - self.center) * self.scale

    def invert(self, points):
        return np.asarray(points) / self.scale + self.center


@dataclass
class PointCloud:
    points: np.ndarray
    category: str | None = None
    id: str = ""
    transform: Transform | None = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ContractViolation(f"point cloud must be N x 3, got {pts.shape}")
        if pts.shape[0] < 1:
            raise EmptyInputError("point cloud has no points")
        if not np.isfinite(pts).all():
            raise ContractViolation("point cloud has non-finite coordinates")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, category=self.category, id=self.id, transform=self.transform)


def normalize(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the largest radius is 0.5."""
    center = cloud.points.mean(axis=0)
    radius = np.sqrt(((cloud.points - center) ** 2).sum(axis=1)).max()
    scale = 0.5 / radius if radius > 0 else 1.0
    t = Transform(center=center, scale=float(scale))
    return PointCloud(t.apply(cloud.points), cloud.category, cloud.id, t)


def denormalize(points, transform: Transform | None) -> np.ndarray:
    return np.asarray(points) if transform is None else transform.invert(points)


def format_for_path(path) -> str:
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext in (".xyz", ".txt"):
        return "xyz-ascii"
    if ext in (".pcb", ".bin"):
        return "pcb-binary"
    raise ContractViolation(f"cannot infer point-cloud format from {path!r}; use .xyz or .pcb")


def _parse_xyz(text: str, name: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) != 3:
            raise ParseError(f"{name}:{lineno}: expected 3 values, got {len(tokens)}")
        try:
            row = [float(tok) for tok in tokens]
        except ValueError:
            raise ParseError(f"{name}:{lineno}: non-numeric token in {stripped!r}") from None
        if not all(np.isfinite(row)):
            raise ParseError(f"{name}:{lineno}: non-finite coordinate")
        rows.append(row)
    if not rows:
        raise EmptyInputError(f"{name}: no points")
    return np.array(rows, dtype=np.float64)


def _parse_pcb(payload: bytes, name: str) -> np.ndarray:
    if len(payload) < _PCB_HEADER.size:
        raise ParseError(f"{name}: offset 0: file shorter than the 16-byte header")
    magic, count, _flags, _reserved = _PCB_HEADER.unpack_from(payload, 0)
    if magic != PCB_MAGIC:
        raise ParseError(f"{name}: offset 0: bad magic {magic!r}")
    expected = _PCB_HEADER.size + count * 12
    if len(payload) != expected:
        raise ParseError(f"{name}: offset {min(len(payload), expected)}: "
                         f"expected {expected} bytes for {count} points, found {len(payload)}")
    if count == 0:
        raise EmptyInputError(f"{name}: no points")
    pts = np.frombuffer(payload, dtype="<f4", count=count * 3, offset=_PCB_HEADER.size)
    pts = pts.reshape(count, 3).astype(np.float64)
    if not np.isfinite(pts).all():
        bad = int(np.argwhere(~np.isfinite(pts))[0][0])
        raise ParseError(f"{name}: offset {_PCB_HEADER.size + 12 * bad}: non-finite coordinate")
    return pts


def read_cloud(path, format: str | None = None, category=None) -> PointCloud:
    format = format or format_for_path(path)
    name = os.fspath(path)
    if format == "xyz-ascii":
        with open(path, "r", encoding="utf-8") as fh:
            pts = _parse_xyz(fh.read(), name)
    elif format == "pcb-binary":
        with open(path, "rb") as fh:
            pts = _parse_pcb(fh.read(), name)
    else:
        raise ContractViolation(f"unknown format {format!r}; expected one of {FORMATS}")
    stem = os.path.splitext(os.path.basename(name))[0]
    return PointCloud(pts, category=category, id=stem)


def encode_cloud(points, format: str) -> bytes:
    pts = np.asarray(points.points if isinstance(points, PointCloud) else points, dtype=np.float64)
    if format == "xyz-ascii":
        buf = io.StringIO()
        for x, y, z in pts.tolist():
            buf.write(f"{x!r} {y!r} {z!r}\n")
        return buf.getvalue().encode()
    if format == "pcb-binary":
        return _PCB_HEADER.pack(PCB_MAGIC, pts.shape[0], 0, 0) + pts.astype("<f4").tobytes()
    raise ContractViolation(f"unknown format {format!r}; expected one of {FORMATS}")


def write_cloud(path, points, format: str | None = None) -> None:
    """Write atomically (temp file + rename)."""
    atomic_write_bytes(path, encode_cloud(points, format or format_for_path(path)))


# -- dataset manifest ---------------------------------------------------------

MANIFEST_HEADER = "id\tcategory\tsplit\tpartial\tcomplete"


@dataclass
class DatasetPair:
    partial: PointCloud
    complete: PointCloud
    split: str = "train"

    @property
    def category(self):
        return self.complete.category

    @property
    def id(self):
        return self.complete.id


@dataclass
class ManifestRecord:
    id: str
    category: str
    split: str
    partial: str
    complete: str


def write_manifest(path, records) -> None:
    lines = [MANIFEST_HEADER]
    for r in records:
        lines.append("\t".join([r.id, r.category, r.split, r.partial, r.complete]))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_manifest(path) -> list[ManifestRecord]:
    """Tab-separated table; relative paths resolve against the manifest's directory."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ParseError(f"{path}:1: expected header {MANIFEST_HEADER!r}")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise ParseError(f"{path}:{lineno}: expected 5 tab-separated columns")
        rid, cat, split, partial, complete = cols
        if split not in ("train", "test"):
            raise ParseError(f"{path}:{lineno}: split must be train or test, got {split!r}")
        records.append(ManifestRecord(rid, cat, split,
                                      os.path.join(base, partial), os.path.join(base, complete)))
    return records


def load_pairs(path, split=None) -> list[DatasetPair]:
    pairs = []
    for r in read_manifest(path):
        if split is not None and r.split != split:
            continue
        for p in (r.partial, r.complete):
            if not os.path.exists(p):
                raise FileNotFoundError(f"dataset file missing: {p} (record {r.id})")
        partial = read_cloud(r.partial, category=r.category)
        complete = read_cloud(r.complete, category=r.category)
        partial.id = complete.id = r.id
        pairs.append(DatasetPair(partial, complete, r.split))
    return pairs
