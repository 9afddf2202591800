"""Readers and writers for every on-disk artifact.

Formats:

* ``.flo``  Middlebury flow: float32 202021.25, int32 width, int32 height,
  then row-major interleaved (u, v) float32. Little-endian.
* ``.pfm``  float maps: ``Pf`` (1 channel) or ``PF`` (3 channels), negative
  scale for little-endian, rows stored bottom-to-top.
* ``.ppm`` / ``.pgm``  binary P6 (RGB) / P5 (labels, masks), maxval 255.
* ``.npy``  per-class score maps (H, W, C) float32.
* ``manifest.json``  dataset manifest.
* reports  plain aligned text or CSV.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FormatError, LengthError, RangeError, ValidationError, VersionError

FLO_MAGIC = 202021.25
UNKNOWN_FLOW = 1e9  # |value| above this marks an unknown flow component
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# flow


def write_flo(flow, path):
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValidationError(f"flow must be HxWx2, got {flow.shape}")
    h, w = flow.shape[:2]
    if h <= 0 or w <= 0:
        raise ValidationError("flow width and height must be positive")
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", FLO_MAGIC, w, h))
        f.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_flo(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise LengthError(f"{path}: file shorter than the 12-byte header")
    magic, w, h = struct.unpack("<fii", raw[:12])
    if magic != FLO_MAGIC:
        raise FormatError(f"{path}: bad .flo magic {magic!r}")
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: bad dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(raw) != expected:
        raise LengthError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    return data.astype(np.float32)


def flow_valid_mask(flow):
    """Pixels whose flow is finite and not the unknown sentinel."""
    flow = np.asarray(flow)
    return np.all(np.isfinite(flow) & (np.abs(flow) <= UNKNOWN_FLOW), axis=-1)


# ---------------------------------------------------------------------------
# PFM


def write_pfm(data, path):
    data = np.asarray(data)
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: PFM payload contains non-finite values")
    if data.ndim == 2:
        tag, channels = b"Pf", 1
    elif data.ndim == 3 and data.shape[2] == 3:
        tag, channels = b"PF", 3
    elif data.ndim == 3 and data.shape[2] == 1:
        tag, channels = b"Pf", 1
        data = data[..., 0]
    else:
        raise ValidationError(f"PFM supports HxW or HxWx3, got {data.shape}")
    h, w = data.shape[:2]
    body = np.ascontiguousarray(data[::-1], dtype="<f4")
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(body.tobytes())


def _read_token_lines(buf, count):
    lines = []
    pos = 0
    while len(lines) < count:
        end = buf.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated header")
        line = buf[pos:end].strip()
        pos = end + 1
        if line:
            lines.append(line)
    return lines, pos


def read_pfm(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] not in (b"PF", b"Pf"):
        raise FormatError(f"{path}: unsupported PFM header {raw[:2]!r}")
    try:
        (tag, dims, scale), pos = _read_token_lines(raw, 3)
        w, h = (int(v) for v in dims.split())
        scale = float(scale)
    except (ValueError, FormatError) as exc:
        raise FormatError(f"{path}: malformed PFM header") from exc
    channels = 3 if tag == b"PF" else 1
    if scale == 0:
        raise FormatError(f"{path}: zero PFM scale")
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    if len(raw) - pos != 4 * n:
        raise LengthError(f"{path}: expected {4 * n} payload bytes, found {len(raw) - pos}")
    data = np.frombuffer(raw, dtype=dtype, offset=pos, count=n).astype(np.float32)
    data = data.reshape((h, w, 3) if channels == 3 else (h, w))
    return np.ascontiguousarray(data[::-1])


# ---------------------------------------------------------------------------
# PNM


def write_pnm(image, path):
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 3:
        tag = b"P6"
    elif image.ndim == 2:
        tag = b"P5"
    else:
        raise ValidationError(f"PNM supports HxW or HxWx3, got {image.shape}")
    if image.size and (image.min() < 0 or image.max() > 255):
        raise RangeError(f"{path}: values must lie in 0..255, got [{image.min()}, {image.max()}]")
    if np.issubdtype(image.dtype, np.floating) and not np.all(image == np.round(image)):
        raise RangeError(f"{path}: PNM values must be integral")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + f"\n{w} {h}\n255\n".encode())
        f.write(image.astype(np.uint8).tobytes())


def read_pnm(path):
    with open(path, "rb") as f:
        raw = f.read()
    tag = raw[:2]
    if tag not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM header {tag!r}")
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PNM header")
        tokens.append(int(raw[start:pos]))
    pos += 1  # single whitespace before the raster
    w, h, maxval = tokens
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PNM is supported (maxval {maxval})")
    channels = 3 if tag == b"P6" else 1
    n = w * h * channels
    if len(raw) - pos != n:
        raise LengthError(f"{path}: expected {n} raster bytes, found {len(raw) - pos}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos, count=n)
    return data.reshape((h, w, 3) if channels == 3 else (h, w)).copy()


# ---------------------------------------------------------------------------
# score maps


def write_scores(scores, path):
    np.save(path, np.ascontiguousarray(scores, dtype="<f4"), allow_pickle=False)


def read_scores(path):
    return np.load(path, allow_pickle=False).astype(np.float32)


# ---------------------------------------------------------------------------
# manifest


@dataclass
class Intrinsics:
    f: float
    cx: float
    cy: float

    def matrix(self):
        return np.array([[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])


@dataclass
class Pose:
    """Camera-to-world rotation ``R`` (3x3) and camera centre ``t``."""
    R: list
    t: list

    @property
    def rotation(self):
        return np.asarray(self.R, dtype=np.float64)

    @property
    def translation(self):
        return np.asarray(self.t, dtype=np.float64)


@dataclass
class SceneRecord:
    scene_id: int
    lighting: str
    frame_count: int
    intrinsics: Intrinsics
    poses: list


@dataclass
class PaletteEntry:
    class_id: int
    name: str
    rgb: tuple


@dataclass
class DatasetManifest:
    scenes: list
    class_palette: list
    rng_seed: int
    resolution: tuple = (64, 64)  # (width, height)
    schema_version: int = SCHEMA_VERSION
    config: dict = field(default_factory=dict)


def orthonormality_error(R):
    R = np.asarray(R, dtype=np.float64)
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def validate_manifest(manifest):
    if manifest.schema_version != SCHEMA_VERSION:
        raise VersionError(f"manifest schema {manifest.schema_version}, expected {SCHEMA_VERSION}")
    ids = sorted(p.class_id for p in manifest.class_palette)
    if ids != list(range(len(ids))):
        raise ValidationError(f"class ids must be contiguous from 0, got {ids}")
    if not 0 <= int(manifest.rng_seed) < 2**64:
        raise ValidationError("rng_seed must be a 64-bit unsigned integer")
    for sc in manifest.scenes:
        if sc.frame_count < 2:
            raise ValidationError(f"scene {sc.scene_id}: frame_count must be >= 2")
        if len(sc.poses) != sc.frame_count:
            raise ValidationError(f"scene {sc.scene_id}: {len(sc.poses)} poses for {sc.frame_count} frames")
        for k, pose in enumerate(sc.poses):
            err = orthonormality_error(pose.R)
            if err > 1e-6:
                raise ValidationError(
                    f"scene {sc.scene_id} frame {k}: rotation not orthonormal (error {err:.2e})")


def write_manifest(manifest, path):
    validate_manifest(manifest)
    doc = asdict(manifest)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def read_manifest(path):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise VersionError(f"{path}: schema_version {doc.get('schema_version')} != {SCHEMA_VERSION}")
    scenes = [
        SceneRecord(
            scene_id=s["scene_id"], lighting=s["lighting"], frame_count=s["frame_count"],
            intrinsics=Intrinsics(**s["intrinsics"]),
            poses=[Pose(R=p["R"], t=p["t"]) for p in s["poses"]])
        for s in doc["scenes"]
    ]
    palette = [PaletteEntry(p["class_id"], p["name"], tuple(p["rgb"])) for p in doc["class_palette"]]
    manifest = DatasetManifest(
        scenes=scenes, class_palette=palette, rng_seed=doc["rng_seed"],
        resolution=tuple(doc["resolution"]), schema_version=doc["schema_version"],
        config=doc.get("config", {}))
    validate_manifest(manifest)
    return manifest


# ---------------------------------------------------------------------------
# reports


@dataclass
class Column:
    name: str
    better: str  # "higher" | "lower" | "info"


@dataclass
class ReportRow:
    label: str
    values: list


@dataclass
class ReportTable:
    title: str
    columns: list
    rows: list = field(default_factory=list)
    header: list = field(default_factory=list)
    footer: list = field(default_factory=list)

    def add_row(self, label, values):
        values = list(values)
        if len(values) != len(self.columns):
            raise ValidationError(
                f"row {label!r} has {len(values)} values for {len(self.columns)} columns")
        self.rows.append(ReportRow(label, values))

    def validate(self):
        for c in self.columns:
            if c.better not in ("higher", "lower", "info"):
                raise ValidationError(f"column {c.name!r}: bad direction {c.better!r}")
        for r in self.rows:
            if len(r.values) != len(self.columns):
                raise ValidationError(f"row {r.label!r}: wrong value count")

    def row(self, label):
        for r in self.rows:
            if r.label == label:
                return dict(zip((c.name for c in self.columns), r.values))
        raise KeyError(label)


NORMAL_COLUMNS = ["mean", "median", "rmse", "11.25", "22.5", "30"]
_ARROWS = {"higher": "(higher)", "lower": "(lower)", "info": ""}


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.4f}"


def render_report(table, fmt="plain"):
    table.validate()
    if fmt == "plain":
        heads = ["config"] + [f"{c.name} {_ARROWS[c.better]}".strip() for c in table.columns]
        body = [[r.label] + [_fmt(v) for v in r.values] for r in table.rows]
        widths = [max(len(x) for x in col) for col in zip(heads, *body)] if body else [len(h) for h in heads]
        out = io.StringIO()
        out.write(f"# {table.title}\n")
        for line in table.header:
            out.write(f"# {line}\n")
        out.write("  ".join(h.ljust(w) for h, w in zip(heads, widths)).rstrip() + "\n")
        out.write("  ".join("-" * w for w in widths) + "\n")
        for row in body:
            out.write("  ".join(x.ljust(w) for x, w in zip(row, widths)).rstrip() + "\n")
        for line in table.footer:
            out.write(f"{line}\n")
        return out.getvalue()
    if fmt == "delimited":
        out = io.StringIO()
        out.write(f"# {table.title}\n")
        for line in table.header:
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["config"] + [c.name for c in table.columns])
        w.writerow(["better"] + [c.better for c in table.columns])
        for r in table.rows:
            w.writerow([r.label] + [_fmt(v) for v in r.values])
        for line in table.footer:
            out.write(f"## {line}\n")
        return out.getvalue()
    raise ValidationError(f"unknown report format {fmt!r}")


def write_report(table, path, fmt="plain"):
    text = render_report(table, fmt)
    with open(path, "w") as f:
        f.write(text)


def read_report(path):
    """Parse a delimited report back into a :class:`ReportTable`."""
    with open(path) as f:
        lines = f.read().splitlines()
    title = lines[0][2:]
    header, footer, data = [], [], []
    for line in lines[1:]:
        if line.startswith("## "):
            footer.append(line[3:])
        elif line.startswith("# "):
            header.append(line[2:])
        else:
            data.append(line)
    rows = list(csv.reader(data))
    names, better = rows[0][1:], rows[1][1:]
    table = ReportTable(title, [Column(n, b) for n, b in zip(names, better)],
                        header=header, footer=footer)
    for r in rows[2:]:
        table.add_row(r[0], [float(v) for v in r[1:]])
    return table


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
