"""Binary container files: one JSON header line, then raw little-endian arrays.

Every on-disk artifact (classifier heads, feature sets, ingested stores,
predictor checkpoints) shares the same framing:

    <compact JSON header>\\n<payload bytes>

The header is UTF-8 JSON with sorted keys and no whitespace, so a file
re-serialized from its parsed form is byte-identical.  The header fields
determine which arrays follow and their shapes:

    head        {"d", "C", "dtype"}                     W (d x C), then b (C)
    features    {"n", "dim", "num_classes", "dtype"}    X (n x dim), labels (n)
    store       features fields + {"r", "split_tag", "bias_removed"}
    checkpoint  {"hyper", "n_params", "dtype"}          flat parameter vector

Float arrays are row-major little-endian, dtype "f32" or "f64"; label arrays
are little-endian int32.
"""

from __future__ import annotations

import json

import numpy as np

from nodi.errors import FormatError

FLOAT_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
LABEL_DTYPE = np.dtype("<i4")


def _dtype_tag(arr: np.ndarray) -> str:
    for tag, dt in FLOAT_DTYPES.items():
        if arr.dtype == dt:
            return tag
    raise FormatError(f"unsupported float dtype {arr.dtype}; use float32 or float64")


def _float_dtype(header: dict, path) -> np.dtype:
    tag = header.get("dtype")
    if tag not in FLOAT_DTYPES:
        raise FormatError(f"{path}: unknown dtype tag {tag!r}", offset=0)
    return FLOAT_DTYPES[tag]


def _encode(header: dict, chunks: list[bytes]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return head + b"\n" + b"".join(chunks)


def _split(raw: bytes, path) -> tuple[dict, bytes, int]:
    """Return (header, payload, payload base offset)."""
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line", offset=0)
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}", offset=0) from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header is not a JSON object", offset=0)
    return header, raw[nl + 1 :], nl + 1


def _require(header: dict, fields: tuple[str, ...], path) -> None:
    missing = [f for f in fields if f not in header]
    if missing:
        raise FormatError(f"{path}: header missing fields {missing}", offset=0)


def _take(payload: bytes, pos: int, dtype: np.dtype, shape: tuple, path, base: int):
    """Slice one array out of the payload, tracking absolute byte offsets."""
    count = 1
    for s in shape:
        count *= int(s)
    nbytes = count * dtype.itemsize
    if pos + nbytes > len(payload):
        raise FormatError(
            f"{path}: payload truncated, wanted {nbytes} bytes for shape {shape}",
            offset=base + pos,
        )
    arr = np.frombuffer(payload, dtype=dtype, count=count, offset=pos)
    return arr.reshape(shape).copy(), pos + nbytes


def _finish(payload: bytes, pos: int, path, base: int) -> None:
    if pos != len(payload):
        raise FormatError(
            f"{path}: {len(payload) - pos} trailing bytes after payload",
            offset=base + pos,
        )


def _dims(header: dict, fields: tuple[str, ...], path) -> list[int]:
    out = []
    for f in fields:
        v = header[f]
        if not isinstance(v, int) or v < 0:
            raise FormatError(f"{path}: header field {f!r} must be a non-negative int", offset=0)
        out.append(v)
    return out


# -- classifier heads --------------------------------------------------------


def write_head_file(path, w: np.ndarray, b: np.ndarray) -> None:
    """Serialize a head: W (d x C) then b (C), dtype taken from the arrays."""
    w = np.ascontiguousarray(w)
    b = np.ascontiguousarray(b)
    if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
        raise FormatError(f"head shapes inconsistent: W {w.shape}, b {b.shape}")
    tag = _dtype_tag(w)
    if _dtype_tag(b) != tag:
        raise FormatError("W and b must share a dtype")
    header = {"C": int(w.shape[1]), "d": int(w.shape[0]), "dtype": tag}
    dt = FLOAT_DTYPES[tag]
    with open(path, "wb") as fh:
        fh.write(_encode(header, [w.astype(dt, copy=False).tobytes(), b.astype(dt, copy=False).tobytes()]))


def read_head_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Return (W, b) in the stored dtype."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header, payload, base = _split(raw, path)
    _require(header, ("d", "C", "dtype"), path)
    d, c = _dims(header, ("d", "C"), path)
    dt = _float_dtype(header, path)
    w, pos = _take(payload, 0, dt, (d, c), path, base)
    b, pos = _take(payload, pos, dt, (c,), path, base)
    _finish(payload, pos, path, base)
    return w, b


# -- feature sets ------------------------------------------------------------


def write_feature_file(path, x: np.ndarray, labels: np.ndarray, num_classes: int) -> None:
    x = np.ascontiguousarray(x)
    labels = np.ascontiguousarray(labels, dtype=LABEL_DTYPE)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise FormatError(f"feature shapes inconsistent: X {x.shape}, labels {labels.shape}")
    header = {
        "dim": int(x.shape[1]),
        "dtype": _dtype_tag(x),
        "n": int(x.shape[0]),
        "num_classes": int(num_classes),
    }
    with open(path, "wb") as fh:
        fh.write(_encode(header, [x.tobytes(), labels.tobytes()]))


def _read_matrix_and_labels(header, payload, base, path):
    n, dim = _dims(header, ("n", "dim"), path)
    dt = _float_dtype(header, path)
    x, pos = _take(payload, 0, dt, (n, dim), path, base)
    labels, pos = _take(payload, pos, LABEL_DTYPE, (n,), path, base)
    _finish(payload, pos, path, base)
    return x, labels


def read_feature_file(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Return (X, labels, num_classes); X keeps the stored dtype."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header, payload, base = _split(raw, path)
    _require(header, ("n", "dim", "num_classes", "dtype"), path)
    (num_classes,) = _dims(header, ("num_classes",), path)
    x, labels = _read_matrix_and_labels(header, payload, base, path)
    return x, labels, num_classes


# -- ingested stores ---------------------------------------------------------


def write_store_file(
    path,
    x: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    r: float,
    split_tag: str,
    bias_removed: bool,
) -> None:
    x = np.ascontiguousarray(x)
    labels = np.ascontiguousarray(labels, dtype=LABEL_DTYPE)
    header = {
        "bias_removed": bool(bias_removed),
        "dim": int(x.shape[1]),
        "dtype": _dtype_tag(x),
        "n": int(x.shape[0]),
        "num_classes": int(num_classes),
        "r": float(r),
        "split_tag": str(split_tag),
    }
    with open(path, "wb") as fh:
        fh.write(_encode(header, [x.tobytes(), labels.tobytes()]))


def read_store_file(path) -> dict:
    """Return a dict with keys x, labels, num_classes, r, split_tag, bias_removed."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header, payload, base = _split(raw, path)
    _require(header, ("n", "dim", "num_classes", "dtype", "r", "split_tag", "bias_removed"), path)
    (num_classes,) = _dims(header, ("num_classes",), path)
    x, labels = _read_matrix_and_labels(header, payload, base, path)
    return {
        "x": x,
        "labels": labels,
        "num_classes": num_classes,
        "r": float(header["r"]),
        "split_tag": str(header["split_tag"]),
        "bias_removed": bool(header["bias_removed"]),
    }


# -- predictor checkpoints ---------------------------------------------------


def write_checkpoint_file(path, hyper: dict, params: np.ndarray) -> None:
    params = np.ascontiguousarray(params, dtype=FLOAT_DTYPES["f64"])
    if params.ndim != 1:
        raise FormatError(f"checkpoint params must be flat, got shape {params.shape}")
    header = {"dtype": "f64", "hyper": {k: int(v) for k, v in sorted(hyper.items())}, "n_params": int(params.size)}
    with open(path, "wb") as fh:
        fh.write(_encode(header, [params.tobytes()]))


def read_checkpoint_file(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    header, payload, base = _split(raw, path)
    _require(header, ("hyper", "n_params", "dtype"), path)
    if not isinstance(header["hyper"], dict):
        raise FormatError(f"{path}: hyper must be an object", offset=0)
    (n_params,) = _dims(header, ("n_params",), path)
    dt = _float_dtype(header, path)
    params, pos = _take(payload, 0, dt, (n_params,), path, base)
    _finish(payload, pos, path, base)
    return {k: int(v) for k, v in header["hyper"].items()}, params
