"""Mask/field file formats, run configuration and metric report emission.

Portable formats:

* label grid: ASCII header ``SSEG 1 <height> <width>`` then row-major
  whitespace-separated non-negative integer ids, one grid row per line.
* field: ASCII header line ``SSEGF 1 <height> <width> <channels>`` followed by
  a little-endian float32 payload in row-major ``(row, col, channel)`` order.
  One channel reads back as a 2-D array.

Label masks may also be stored as single-channel 8- or 16-bit PNG.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .losses import LossConfig
from .metrics import DEFAULT_TAUS, MetricReport

__all__ = [
    "MaskIOError",
    "UnreadableFileError",
    "UnsupportedBitDepthError",
    "MalformedHeaderError",
    "read_label_mask",
    "write_label_mask",
    "read_field",
    "write_field",
    "RunConfig",
    "write_metric_report",
    "read_metric_report_json",
]

GRID_MAGIC = "SSEG"
FIELD_MAGIC = "SSEGF"
FORMAT_VERSION = 1
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
PNG_MAX_ID = 65535


class MaskIOError(Exception):
    pass


class UnreadableFileError(MaskIOError, OSError):
    pass


class UnsupportedBitDepthError(MaskIOError, ValueError):
    pass


class MalformedHeaderError(MaskIOError, ValueError):
    pass


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc


def _parse_header(line: bytes, magic: str, n_dims: int, path):
    try:
        tokens = line.decode("ascii").split()
    except UnicodeDecodeError:
        raise MalformedHeaderError(f"{path}: header is not ASCII") from None
    if len(tokens) != 2 + n_dims or tokens[0] != magic:
        raise MalformedHeaderError(f"{path}: expected '{magic} <version> ...' header, got {line[:40]!r}")
    try:
        version, *dims = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeaderError(f"{path}: non-integer header fields {tokens[1:]}") from None
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported format version {version}")
    if any(d < 0 for d in dims):
        raise MalformedHeaderError(f"{path}: negative dimension in header")
    return dims


def _read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.array(im)
    except OSError as exc:
        raise UnreadableFileError(f"cannot decode PNG {path}: {exc}") from exc
    if mode == "L":
        return arr.astype(np.int32)
    if mode.startswith("I;16"):
        return arr.astype(np.int32)
    if mode == "I":
        if arr.size and (arr.min() < 0 or arr.max() > PNG_MAX_ID):
            raise UnsupportedBitDepthError(f"{path}: 32-bit PNG values out of the 16-bit id range")
        return arr.astype(np.int32)
    raise UnsupportedBitDepthError(f"{path}: PNG mode {mode!r} is not single-channel 8/16-bit")


def _read_grid(data: bytes, path) -> np.ndarray:
    head, _, body = data.partition(b"\n")
    h, w = _parse_header(head, GRID_MAGIC, 2, path)
    try:
        values = [int(t) for t in body.split()]
    except ValueError:
        raise MalformedHeaderError(f"{path}: non-integer id in payload") from None
    if len(values) != h * w:
        raise MalformedHeaderError(f"{path}: header says {h}x{w} = {h * w} ids, payload has {len(values)}")
    arr = np.array(values, dtype=np.int64).reshape(h, w)
    if arr.size and arr.min() < 0:
        raise MalformedHeaderError(f"{path}: negative instance id")
    return arr


def read_label_mask(path) -> np.ndarray:
    """Read a label mask from PNG or the portable grid format (detected from content)."""
    data = _read_bytes(path)
    if data.startswith(PNG_SIGNATURE):
        return _read_png(path)
    if data.startswith(GRID_MAGIC.encode() + b" "):
        return _read_grid(data, path)
    raise MalformedHeaderError(f"{path}: neither a PNG nor a '{GRID_MAGIC}' grid file")


def write_label_mask(mask, path, fmt: str | None = None) -> None:
    """Write ``mask`` as PNG (``.png`` suffix or ``fmt="png"``) or as a portable grid."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("label mask must be 2-D")
    fmt = fmt or ("png" if str(path).lower().endswith(".png") else "sseg")
    if fmt == "png":
        if mask.size and (mask.min() < 0 or mask.max() > PNG_MAX_ID):
            raise ValueError(f"instance ids above {PNG_MAX_ID} do not fit a 16-bit PNG; "
                             "use the portable SSEG grid format instead")
        Image.fromarray(mask.astype(np.uint16)).save(path, format="PNG")
        return
    if fmt != "sseg":
        raise ValueError(f"unknown mask format {fmt!r}")
    h, w = mask.shape
    lines = [f"{GRID_MAGIC} {FORMAT_VERSION} {h} {w}"]
    lines += [" ".join(str(int(v)) for v in row) for row in mask]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_field(arr, path) -> None:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError("field must be 2-D or 3-D")
    h, w, c = arr.shape
    header = f"{FIELD_MAGIC} {FORMAT_VERSION} {h} {w} {c}\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_field(path) -> np.ndarray:
    data = _read_bytes(path)
    head, sep, body = data.partition(b"\n")
    if not sep:
        raise MalformedHeaderError(f"{path}: missing header line")
    h, w, c = _parse_header(head, FIELD_MAGIC, 3, path)
    if len(body) != 4 * h * w * c:
        raise MalformedHeaderError(f"{path}: payload has {len(body)} bytes, header implies {4 * h * w * c}")
    arr = np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float32)
    return arr[..., 0] if c == 1 else arr


# --------------------------------------------------------------------------
# configuration and reports
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    taus: tuple = DEFAULT_TAUS
    loss: LossConfig = field(default_factory=LossConfig)
    prob_thresh: float = 0.5
    nms_thresh: float = 0.4
    n_rays: int = 32
    nesting: str = "one-to-one"
    aggregation: str = "per-image-mean"
    outer_policy: str = "any"
    reduction: str = "sum"
    output_format: str = "csv"
    seed: int = 0
    scene: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        self.taus = tuple(float(t) for t in self.taus)
        if any(not 0 < t < 1 for t in self.taus):
            raise ValueError("tau grid must lie within (0, 1)")
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise UnreadableFileError(f"cannot read config {path}: {exc}") from exc
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def echo(self) -> dict:
        """Settings every report carries."""
        return {"lambda1": self.loss.lambda1, "lambda2": self.loss.lambda2, "lambda3": self.loss.lambda3,
                "eps": self.loss.eps, "taus": list(self.taus), "reduction": self.reduction,
                "outer_policy": self.outer_policy}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["taus"] = list(self.taus)
        return d


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _tau_label(t) -> str:
    return f"τ_{t:g}"


def _echo_items(report: MetricReport):
    items = {"aggregation": report.aggregation}
    items.update(report.config)
    return sorted((k, json.dumps(v, sort_keys=True)) for k, v in items.items())


def write_metric_report(report: MetricReport, fmt: str = "csv") -> str:
    """Render a report; CSV and markdown put one metric per row, one tau per column."""
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    header = ["metric"] + [_tau_label(t) for t in report.taus]
    if fmt == "csv":
        buf = io.StringIO()
        for k, v in _echo_items(report):
            buf.write(f"# {k}={v}\n")
        for w in report.warnings:
            buf.write(f"# warning: {w}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for name, values in report.rows.items():
            writer.writerow([name] + [_fmt(v) for v in values])
        return buf.getvalue()
    if fmt == "markdown":
        out = [f"- {k}: `{v}`" for k, v in _echo_items(report)]
        out += [f"- warning: {w}" for w in report.warnings]
        out += ["", "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for name, values in report.rows.items():
            out.append("| " + " | ".join([name] + [_fmt(v) for v in values]) + " |")
        return "\n".join(out) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def read_metric_report_json(text: str) -> MetricReport:
    return MetricReport.from_dict(json.loads(text))
