"""Flat checkpoint layout shared by point and variational models.

File layout (all integers and floats little-endian)::

    8 bytes   magic  b"AUTOCO\\x00\\x01"
    uint32    length of the JSON header in bytes
    ...       JSON header: kind, schema, schema_hash, d, op_table, sections
    ...       float64 payload, sections concatenated in header order

Embedding sections are written per field and per table, in (field, table)
order, each of shape (cardinality + 1, d). A variational checkpoint stores
``mu`` and ``rho`` slabs in place of ``emb``. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..features import FieldSchema
from .core import ModelParams

MAGIC = b"AUTOCO\x00\x01"


def _split_tables(schema: FieldSchema, stacked: np.ndarray, prefix: str):
    for i, f in enumerate(schema.fields):
        o = schema.offsets[i]
        n = f.cardinality + 1
        for t in range(stacked.shape[0]):
            yield f"{prefix}[{f.name}][{t}]", stacked[t, o:o + n]


def _join_tables(schema: FieldSchema, arrays: dict, prefix: str, T: int, d: int) -> np.ndarray:
    out = np.empty((T, schema.n_rows, d))
    for i, f in enumerate(schema.fields):
        o = schema.offsets[i]
        n = f.cardinality + 1
        for t in range(T):
            out[t, o:o + n] = arrays[f"{prefix}[{f.name}][{t}]"]
    return out


def write(path, kind: str, params: ModelParams, extra_tables: dict | None = None,
          extra: dict | None = None) -> None:
    """Serialize ``params``; ``extra_tables`` maps prefix -> stacked (T, R, d) slabs
    written instead of ``params.emb``; ``extra`` holds further named arrays."""
    schema = params.schema
    tables = extra_tables if extra_tables is not None else {"emb": params.emb}
    sections: list[tuple[str, np.ndarray]] = []
    for prefix, stacked in tables.items():
        sections.extend(_split_tables(schema, stacked, prefix))
    sections += [
        ("head_w", params.head_w),
        ("head_b", params.head_b),
        ("w1", params.w1),
        ("bias", np.array([params.bias])),
    ]
    for name, arr in (extra or {}).items():
        sections.append((name, np.asarray(arr, dtype=np.float64)))
    header = {
        "kind": kind,
        "schema": schema.to_dict(),
        "schema_hash": schema.hash(),
        "d": params.d,
        "n_tables": int(params.emb.shape[0]),
        "op_table": [int(t) for t in params.op_table],
        "table_prefixes": list(tables),
        "sections": [{"name": n, "shape": list(a.shape)} for n, a in sections],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in sections:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read(path) -> tuple[dict, dict]:
    """Return ``(header, arrays)`` with embedding slabs re-stacked per prefix."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not an autoco checkpoint")
    (n,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + n].decode())
    schema = FieldSchema.from_dict(header["schema"])
    if schema.hash() != header["schema_hash"]:
        raise ValueError(f"{path}: schema hash mismatch")
    pos = 12 + n
    arrays = {}
    for sec in header["sections"]:
        count = int(np.prod(sec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(sec["shape"])
        arrays[sec["name"]] = arr.astype(np.float64)
        pos += 8 * count
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after payload")
    T, d = header["n_tables"], header["d"]
    for prefix in header["table_prefixes"]:
        arrays[prefix] = _join_tables(schema, arrays, prefix, T, d)
    header["schema_obj"] = schema
    return header, arrays


def save_model(path, params: ModelParams) -> None:
    write(path, "model", params)


def load_model(path) -> ModelParams:
    header, a = read(path)
    return ModelParams(header["schema_obj"], a["emb"], np.array(header["op_table"]),
                       a["head_w"], a["head_b"], a["w1"], float(a["bias"][0]))
