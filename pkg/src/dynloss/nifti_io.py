"""
Single-file NIfTI-1 (``.nii``) reading and writing, plus run-log and report
serialisation.

Only uncompressed single-file volumes with ``dim[0] == 3`` and datatypes
uint8, int16, int32 and float32 are handled. Orientation fields (qform,
sform and friends) are decoded and carried through untouched but never
interpreted.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    CorruptFileError,
    RangeError,
    UnsupportedDatatypeError,
    UnsupportedFormatError,
    UnsupportedVariantError,
)
from .volumes import LabelGrid, VoxelGrid

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# field name, struct code
_LAYOUT = (
    ("sizeof_hdr", "i"),
    ("data_type", "10s"),
    ("db_name", "18s"),
    ("extents", "i"),
    ("session_error", "h"),
    ("regular", "B"),
    ("dim_info", "B"),
    ("dim", "8h"),
    ("intent_p", "3f"),
    ("intent_code", "h"),
    ("datatype", "h"),
    ("bitpix", "h"),
    ("slice_start", "h"),
    ("pixdim", "8f"),
    ("vox_offset", "f"),
    ("scl_slope", "f"),
    ("scl_inter", "f"),
    ("slice_end", "h"),
    ("slice_code", "B"),
    ("xyzt_units", "B"),
    ("cal_max", "f"),
    ("cal_min", "f"),
    ("slice_duration", "f"),
    ("toffset", "f"),
    ("glmax", "i"),
    ("glmin", "i"),
    ("descrip", "80s"),
    ("aux_file", "24s"),
    ("qform_code", "h"),
    ("sform_code", "h"),
    ("quatern", "6f"),
    ("srow_x", "4f"),
    ("srow_y", "4f"),
    ("srow_z", "4f"),
    ("intent_name", "16s"),
    ("magic", "4s"),
)
_FORMAT = "".join(code for _, code in _LAYOUT)
assert struct.calcsize("<" + _FORMAT) == HEADER_SIZE

# code -> (numpy dtype without byte order, bitpix)
DATATYPES = {
    2: (np.dtype("u1"), 8),
    4: (np.dtype("i2"), 16),
    8: (np.dtype("i4"), 32),
    16: (np.dtype("f4"), 32),
}
UINT8, INT16, INT32, FLOAT32 = 2, 4, 8, 16


@dataclass
class NiftiHeader:
    dim: tuple[int, ...]
    datatype: int
    bitpix: int
    pixdim: tuple[float, ...]
    vox_offset: float = float(VOX_OFFSET)
    scl_slope: float = 0.0
    scl_inter: float = 0.0
    magic: bytes = MAGIC_SINGLE
    endianness: str = "<"
    sizeof_hdr: int = HEADER_SIZE
    # every other header field, preserved verbatim
    extra: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.dim[1:4])

    @property
    def dtype(self) -> np.dtype:
        return DATATYPES[self.datatype][0].newbyteorder(self.endianness)

    @property
    def little_endian(self) -> bool:
        return self.endianness == "<"


def _unpack(block: bytes, order: str) -> dict:
    values = struct.unpack(order + _FORMAT, block)
    out, i = {}, 0
    for name, code in _LAYOUT:
        count = int(code[:-1]) if code[:-1].isdigit() and code[-1] != "s" else 1
        out[name] = values[i] if count == 1 else tuple(values[i : i + count])
        i += count
    return out


def _pack(fields: dict, order: str) -> bytes:
    values = []
    for name, code in _LAYOUT:
        count = int(code[:-1]) if code[:-1].isdigit() and code[-1] != "s" else 1
        v = fields[name]
        values.extend(v if count > 1 else [v])
    return struct.pack(order + _FORMAT, *values)


def parse_header(data: bytes) -> NiftiHeader:
    """Decode the first 348 bytes of a ``.nii`` file.

    Byte order is inferred from ``sizeof_hdr``. Raises a subclass of
    :class:`~dynloss.errors.NiftiError` for anything this reader does not
    accept.
    """
    if len(data) < HEADER_SIZE:
        raise CorruptFileError(f"need {HEADER_SIZE} header bytes, got {len(data)}")
    block = bytes(data[:HEADER_SIZE])
    for order in ("<", ">"):
        if struct.unpack(order + "i", block[:4])[0] == HEADER_SIZE:
            break
    else:
        raise UnsupportedFormatError("sizeof_hdr is not 348 in either byte order")
    f = _unpack(block, order)

    magic = f["magic"]
    if magic == MAGIC_PAIR:
        raise UnsupportedVariantError("two-file NIfTI (.hdr/.img) is not supported")
    if magic != MAGIC_SINGLE:
        raise UnsupportedFormatError(f"bad magic {magic!r}")
    code = f["datatype"]
    if code not in DATATYPES:
        raise UnsupportedDatatypeError(f"datatype code {code} is not supported")
    if f["bitpix"] != DATATYPES[code][1]:
        raise UnsupportedFormatError(f"bitpix {f['bitpix']} inconsistent with datatype {code}")
    dim = f["dim"]
    if dim[0] != 3:
        raise UnsupportedFormatError(f"only 3D volumes are supported, dim[0]={dim[0]}")
    if min(dim[1:4]) < 1:
        raise UnsupportedFormatError(f"non-positive dimension in {dim[1:4]}")
    vox = f["vox_offset"]
    if not math.isfinite(vox) or vox < HEADER_SIZE or vox != int(vox):
        raise UnsupportedFormatError(f"invalid vox_offset {vox}")
    for name in ("scl_slope", "scl_inter"):
        if not math.isfinite(f[name]):
            raise UnsupportedFormatError(f"{name} is not finite")

    main = {"sizeof_hdr", "dim", "datatype", "bitpix", "pixdim", "vox_offset", "scl_slope", "scl_inter", "magic"}
    return NiftiHeader(
        dim=dim,
        datatype=code,
        bitpix=f["bitpix"],
        pixdim=f["pixdim"],
        vox_offset=vox,
        scl_slope=f["scl_slope"],
        scl_inter=f["scl_inter"],
        magic=magic,
        endianness=order,
        extra={k: v for k, v in f.items() if k not in main},
    )


def _default_extra() -> dict:
    zero = {name: 0 for name, _ in _LAYOUT}
    for name, code in _LAYOUT:
        if code.endswith("s"):
            zero[name] = b""
        elif code[:-1].isdigit():
            zero[name] = (0,) * int(code[:-1])
    zero["regular"] = ord("r")
    zero["xyzt_units"] = 2  # millimetres
    return zero


def header_bytes(hdr: NiftiHeader) -> bytes:
    fields = _default_extra()
    fields.update(hdr.extra)
    fields.update(
        sizeof_hdr=HEADER_SIZE,
        dim=tuple(hdr.dim),
        datatype=hdr.datatype,
        bitpix=hdr.bitpix,
        pixdim=tuple(hdr.pixdim),
        vox_offset=hdr.vox_offset,
        scl_slope=hdr.scl_slope,
        scl_inter=hdr.scl_inter,
        magic=hdr.magic,
    )
    return _pack(fields, hdr.endianness)


def read_nifti(data: bytes) -> tuple[NiftiHeader, np.ndarray]:
    """Header plus the flat raw voxel array (x fastest, scaling not applied)."""
    hdr = parse_header(data)
    count = int(np.prod([int(d) for d in hdr.shape]))
    start = int(hdr.vox_offset)
    nbytes = count * DATATYPES[hdr.datatype][0].itemsize
    if len(data) < start + nbytes:
        raise CorruptFileError(f"data section truncated: need {start + nbytes} bytes, have {len(data)}")
    raw = np.frombuffer(data, dtype=hdr.dtype, count=count, offset=start)
    return hdr, raw.astype(hdr.dtype.newbyteorder("="))


def read_volume(data: bytes, labels: bool = False, num_classes: int | None = None):
    """Decode a ``.nii`` byte string into a VoxelGrid (or a LabelGrid).

    A non-zero ``scl_slope`` maps raw values to ``slope * raw + inter``;
    otherwise raw values pass through in their stored dtype.
    """
    hdr, raw = read_nifti(data)
    values = raw
    if hdr.scl_slope != 0:
        with np.errstate(over="ignore", invalid="ignore"):
            values = hdr.scl_slope * raw.astype(np.float64) + hdr.scl_inter
    spacing = tuple(float(p) if math.isfinite(p) and p > 0 else 1.0 for p in hdr.pixdim[1:4])
    if labels:
        if num_classes is None:
            num_classes = int(values.max()) if values.size else 0
        return LabelGrid(hdr.shape, values, num_classes, spacing)
    return VoxelGrid(hdr.shape, values, spacing)


def _encode(values: np.ndarray, datatype: int) -> np.ndarray:
    dtype = DATATYPES[datatype][0]
    values = np.asarray(values)
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        if values.size:
            lo, hi = values.min(), values.max()
            if lo < info.min or hi > info.max:
                raise RangeError(f"values span [{lo}, {hi}], outside {dtype.name} range")
            if not np.issubdtype(values.dtype, np.integer) and not np.all(values == np.round(values)):
                raise RangeError(f"non-integral values cannot be stored as {dtype.name}")
        return values.astype(dtype)
    if values.size and np.issubdtype(values.dtype, np.floating):
        finite = values[np.isfinite(values)]
        if finite.size and np.abs(finite).max() > np.finfo(np.float32).max:
            raise RangeError("values exceed float32 range")
    return values.astype(dtype)


def write_volume(grid, datatype: int = FLOAT32, header: NiftiHeader | None = None, endianness: str = "<") -> bytes:
    """Encode a VoxelGrid or LabelGrid as a single-file NIfTI-1 byte string.

    ``header`` (e.g. from :func:`read_nifti`) donates its opaque fields such
    as orientation; geometry, datatype and scaling are always rewritten.
    """
    if datatype not in DATATYPES:
        raise UnsupportedDatatypeError(f"datatype code {datatype} is not supported")
    flat = grid.labels if isinstance(grid, LabelGrid) else grid.values
    payload = _encode(flat, datatype)
    spacing = tuple(grid.spacing)
    hdr = NiftiHeader(
        dim=(3, *grid.dims, 1, 1, 1, 1),
        datatype=datatype,
        bitpix=DATATYPES[datatype][1],
        pixdim=(1.0, *spacing, 0.0, 0.0, 0.0, 0.0),
        endianness=endianness,
        extra=dict(header.extra) if header is not None else {},
    )
    if header is not None:
        hdr = replace(hdr, pixdim=(header.pixdim[0], *spacing, *header.pixdim[4:]))
    body = payload.astype(payload.dtype.newbyteorder(endianness)).tobytes()
    return header_bytes(hdr) + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + body


def load(path, labels: bool = False, num_classes: int | None = None):
    with open(path, "rb") as fh:
        return read_volume(fh.read(), labels=labels, num_classes=num_classes)


def save(path, grid, datatype: int = FLOAT32) -> None:
    with open(path, "wb") as fh:
        fh.write(write_volume(grid, datatype))


# --------------------------------------------------------------------------
# run logs and reports
# --------------------------------------------------------------------------

RUN_LOG_COLUMNS = ("epoch", "class_id", "score", "weight", "frozen", "triggered", "C")


@dataclass(frozen=True)
class RunLogRow:
    epoch: int
    class_id: int
    score: float
    weight: float
    frozen: bool
    triggered: bool
    c: float | None = None


def run_log_rows(report) -> list[RunLogRow]:
    """One row per (epoch, class) from an ExperimentReport.

    ``weight`` is the scheduler output at the end of that epoch, i.e. the
    weight used during the next one. ``C`` is filled only on the row of the
    class the plateau test inspected.
    """
    rows = []
    for e, (scores, weights, frozen, check) in enumerate(
        zip(report.scores, report.weights, report.frozen, report.checks), start=1
    ):
        for k, (s, w, f) in enumerate(zip(scores, weights, frozen), start=1):
            inspected = check is not None and check["class_id"] == k
            rows.append(
                RunLogRow(
                    epoch=e,
                    class_id=k,
                    score=s,
                    weight=w,
                    frozen=bool(f),
                    triggered=inspected and bool(check["triggered"]),
                    c=check["C"] if inspected else None,
                )
            )
    return rows


def write_run_log(rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_LOG_COLUMNS)
    for r in rows:
        w.writerow([r.epoch, r.class_id, repr(float(r.score)), repr(float(r.weight)),
                    int(r.frozen), int(r.triggered), "" if r.c is None else repr(float(r.c))])
    return buf.getvalue().encode()


def read_run_log(data: bytes) -> list[RunLogRow]:
    reader = csv.DictReader(io.StringIO(data.decode()))
    if tuple(reader.fieldnames or ()) != RUN_LOG_COLUMNS:
        raise ValueError(f"unexpected run-log columns {reader.fieldnames}")
    return [
        RunLogRow(int(r["epoch"]), int(r["class_id"]), float(r["score"]), float(r["weight"]),
                  r["frozen"] == "1", r["triggered"] == "1", float(r["C"]) if r["C"] else None)
        for r in reader
    ]


def write_report(report) -> bytes:
    """Serialise an ExperimentReport (or a plain dict) as JSON.

    Floats use Python's shortest round-trip repr, so parsing recovers every
    value exactly.
    """
    d = report if isinstance(report, dict) else report.to_dict()
    return (json.dumps(d, indent=1, sort_keys=True, allow_nan=False) + "\n").encode()


def read_report(data: bytes):
    from .toytrainer import ExperimentReport

    return ExperimentReport.from_dict(json.loads(data))
