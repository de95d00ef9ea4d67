"""Bit-exact binary I/O for volumes.

Two containers are understood:

* UVF (native, read/write): 16-byte magic ``UNCMAP-VOL`` + five NUL bytes +
  0x01, one UTF-8 JSON header line ending in ``\\n`` with at least
  ``{"kind", "dims", "classes", "dtype"}``, then the raw little-endian
  payload.  Scalar and probability volumes carry float64 ("f64"), label
  volumes int32 ("i32").  Sample stacks are stored as ``kind="prob"`` with
  an extra ``"passes"`` field and a pass-major payload.  Extra header keys
  (estimator descriptors, config hashes) round-trip untouched.

* NPY (read only): format version 1.0, dtypes ``<f4``/``<f8``/``<i4``,
  C order.  2-D/3-D float arrays become scalar volumes, 2-D/3-D int32
  arrays label volumes, and 4-D/5-D float arrays ``(T, C, *spatial)``
  sample stacks.  Payloads narrower than float64 are widened on read.

Writes are atomic (temp file + rename in the destination directory).
"""

from __future__ import annotations

import ast
import json
import os
import struct
import tempfile

import numpy as np

from .volume import (
    LabelVolume,
    ProbVolume,
    SampleStack,
    ScalarVolume,
    Shape,
    stack_from_array,
)

UVF_MAGIC = b"UNCMAP-VOL\x00\x00\x00\x00\x00\x01"
NPY_MAGIC = b"\x93NUMPY"

_NPY_DTYPES = {"<f4": np.float32, "<f8": np.float64, "<i4": np.int32}


class VolumeIOError(Exception):
    """Base for all volume container failures."""


class MalformedHeaderError(VolumeIOError):
    """Magic, JSON header, or declared metadata is unusable."""


class PayloadMismatchError(VolumeIOError):
    """Declared element count disagrees with the payload size on disk."""


class NonFiniteValueError(VolumeIOError):
    """A float payload carries NaN or Inf."""


def _atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header_bytes(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"


def write_volume(path, vol, extra_header: dict | None = None) -> None:
    """Serialize a Scalar/Prob/Label volume to UVF."""
    if isinstance(vol, ScalarVolume):
        kind, classes, payload = "scalar", 0, vol.values
    elif isinstance(vol, ProbVolume):
        kind, classes, payload = "prob", vol.classes, vol.values
    elif isinstance(vol, LabelVolume):
        kind, classes, payload = "label", vol.classes, vol.labels
    else:
        raise TypeError(f"cannot serialize {type(vol).__name__}")
    header = dict(extra_header or {})
    header.update(
        kind=kind,
        dims=list(vol.shape.dims),
        classes=classes,
        dtype="i32" if kind == "label" else "f64",
    )
    body = payload.astype("<i4" if kind == "label" else "<f8").tobytes()
    _atomic_write(path, UVF_MAGIC + _header_bytes(header) + body)


def write_sample_stack(path, stack: SampleStack,
                       extra_header: dict | None = None) -> None:
    """Serialize a SampleStack to UVF (kind "prob" + "passes")."""
    header = dict(extra_header or {})
    header.update(
        kind="prob",
        dims=list(stack.shape.dims),
        classes=stack.classes,
        dtype="f64",
        passes=stack.passes,
    )
    body = b"".join(v.values.astype("<f8").tobytes() for v in stack.volumes)
    _atomic_write(path, UVF_MAGIC + _header_bytes(header) + body)


def _read_uvf_raw(path):
    """Returns (header dict, payload bytes) after structural validation."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(UVF_MAGIC):
        raise MalformedHeaderError(f"{path}: bad magic, not a UVF file")
    newline = blob.find(b"\n", len(UVF_MAGIC))
    if newline < 0:
        raise MalformedHeaderError(f"{path}: unterminated JSON header")
    try:
        header = json.loads(blob[len(UVF_MAGIC):newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{path}: invalid JSON header: {exc}")
    if not isinstance(header, dict):
        raise MalformedHeaderError(f"{path}: header is not a JSON object")
    for key in ("kind", "dims", "classes", "dtype"):
        if key not in header:
            raise MalformedHeaderError(f"{path}: header lacks {key!r}")
    return header, blob[newline + 1:]


def read_header(path) -> dict:
    """The UVF JSON header, including any extra metadata keys."""
    header, _ = _read_uvf_raw(path)
    return header


def _decode_payload(path, payload, count, dtype_code):
    np_dtype = {"f64": "<f8", "i32": "<i4"}.get(dtype_code)
    if np_dtype is None:
        raise MalformedHeaderError(f"{path}: unknown dtype {dtype_code!r}")
    itemsize = 8 if dtype_code == "f64" else 4
    if len(payload) != count * itemsize:
        raise PayloadMismatchError(
            f"{path}: header declares {count} elements "
            f"({count * itemsize} bytes) but payload has {len(payload)} bytes"
        )
    arr = np.frombuffer(payload, dtype=np_dtype).astype(
        np.float64 if dtype_code == "f64" else np.int32
    )
    if dtype_code == "f64" and not np.all(np.isfinite(arr)):
        raise NonFiniteValueError(f"{path}: payload contains NaN or Inf")
    return arr


def _shape_from_header(path, header) -> Shape:
    dims = header["dims"]
    if (not isinstance(dims, list) or not dims
            or not all(isinstance(d, int) and d >= 1 for d in dims)):
        raise MalformedHeaderError(f"{path}: bad dims {dims!r}")
    try:
        return Shape(tuple(dims))
    except ValueError as exc:
        raise MalformedHeaderError(f"{path}: {exc}")


def _read_uvf(path):
    header, payload = _read_uvf_raw(path)
    shape = _shape_from_header(path, header)
    kind = header["kind"]
    classes = header["classes"]
    if kind == "scalar":
        values = _decode_payload(path, payload, shape.nvoxels, "f64")
        return ScalarVolume(shape, values)
    if kind == "label":
        values = _decode_payload(path, payload, shape.nvoxels, "i32")
        return LabelVolume(shape, int(classes), values)
    if kind == "prob":
        if not isinstance(classes, int) or classes < 2:
            raise MalformedHeaderError(f"{path}: bad classes {classes!r}")
        passes = header.get("passes", 0)
        if passes:
            count = passes * shape.nvoxels * classes
            values = _decode_payload(path, payload, count, "f64")
            return stack_from_array(
                values.reshape(passes, shape.nvoxels, classes), shape
            )
        values = _decode_payload(path, payload, shape.nvoxels * classes, "f64")
        return ProbVolume(shape, classes, values)
    raise MalformedHeaderError(f"{path}: unknown kind {kind!r}")


def _read_npy_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != NPY_MAGIC:
        raise MalformedHeaderError(f"{path}: bad NPY magic")
    if blob[6:8] != b"\x01\x00":
        raise MalformedHeaderError(
            f"{path}: only NPY format version 1.0 is supported"
        )
    if len(blob) < 10:
        raise MalformedHeaderError(f"{path}: truncated NPY header")
    (header_len,) = struct.unpack("<H", blob[8:10])
    header_end = 10 + header_len
    try:
        meta = ast.literal_eval(blob[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise MalformedHeaderError(f"{path}: bad NPY header dict: {exc}")
    if not isinstance(meta, dict):
        raise MalformedHeaderError(f"{path}: NPY header is not a dict")
    descr = meta.get("descr")
    if descr not in _NPY_DTYPES:
        raise MalformedHeaderError(
            f"{path}: unsupported dtype {descr!r} (need <f4, <f8 or <i4)"
        )
    if meta.get("fortran_order"):
        raise MalformedHeaderError(f"{path}: Fortran-order NPY not supported")
    shape = meta.get("shape")
    if (not isinstance(shape, tuple)
            or not all(isinstance(d, int) and d >= 1 for d in shape)):
        raise MalformedHeaderError(f"{path}: bad NPY shape {shape!r}")
    dtype = np.dtype(_NPY_DTYPES[descr]).newbyteorder("<")
    count = int(np.prod(shape))
    payload = blob[header_end:]
    if len(payload) != count * dtype.itemsize:
        raise PayloadMismatchError(
            f"{path}: NPY header declares {count} elements but payload "
            f"has {len(payload)} bytes"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if dtype.kind == "f":
        arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValueError(f"{path}: payload contains NaN or Inf")
    else:
        arr = arr.astype(np.int32)
    return arr


def _sniff(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(len(UVF_MAGIC))
    if head.startswith(NPY_MAGIC):
        return "npy"
    if head.startswith(UVF_MAGIC):
        return "uvf"
    raise MalformedHeaderError(f"{path}: neither UVF nor NPY magic found")


def read_volume(path):
    """Load a single volume (UVF, or a 2-D/3-D NPY array).

    NPY float arrays map to ScalarVolume, int32 arrays to LabelVolume
    (classes inferred as max label + 1).  UVF files may yield any kind,
    including a SampleStack when the header carries "passes".
    """
    if _sniff(path) == "uvf":
        return _read_uvf(path)
    arr = _read_npy_array(path)
    if arr.ndim not in (2, 3):
        raise MalformedHeaderError(
            f"{path}: NPY rank {arr.ndim} is not a single volume; "
            f"use read_sample_stack for (T, C, ...) arrays"
        )
    shape = Shape(arr.shape)
    if arr.dtype == np.int32:
        return LabelVolume(shape, int(arr.max()) + 1, arr.reshape(-1))
    return ScalarVolume(shape, arr.reshape(-1))


def read_sample_stack(path) -> SampleStack:
    """Load a SampleStack: UVF with "passes", or NPY (T, C, *spatial)."""
    if _sniff(path) == "uvf":
        stack = _read_uvf(path)
        if not isinstance(stack, SampleStack):
            raise MalformedHeaderError(
                f"{path}: UVF file holds a single volume, not a stack"
            )
        return stack
    arr = _read_npy_array(path)
    if arr.ndim not in (4, 5) or arr.dtype == np.int32:
        raise MalformedHeaderError(
            f"{path}: expected a float NPY array of rank 4 or 5 "
            f"(T, C, *spatial), got rank {arr.ndim} {arr.dtype}"
        )
    t, c = arr.shape[0], arr.shape[1]
    shape = Shape(arr.shape[2:])
    samples = arr.reshape(t, c, shape.nvoxels).transpose(0, 2, 1)
    return stack_from_array(np.ascontiguousarray(samples), shape)
