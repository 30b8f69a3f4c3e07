"""Entity tables, binary graph/checkpoint containers, and dataset manifests.

Entity files are UTF-8 CSV. The first line is ``kind,n,d[,units]``; each
following line is ``id,x,y,f_1,...,f_d[,tissue_id]``.

Graphs (magic ``HGG1``) and checkpoints (magic ``HGC1``) share one layout::

    magic[4] | version u32 | section count u32 | sections...
    section = name_len u16 | name | payload_len u64 | payload

Array payloads are ``kind u8 ('f' float64 / 'i' int64) | ndim u8 |
dims u64 * ndim | little-endian data``. Everything is little-endian.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
import tempfile
from collections import OrderedDict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError
from .graph import RELATIONS, EntitySet, HeteroGraph, RelationEdges
from .model import HGModel, ModelConfig

GRAPH_MAGIC = b"HGG1"
CHECKPOINT_MAGIC = b"HGC1"
FORMAT_VERSION = 1

_DTYPES = {b"f": np.dtype("<f8"), b"i": np.dtype("<i8")}


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# entity tables

def save_entities(path, entities: EntitySet, assignment: Optional[Sequence[int]] = None,
                  units: str = "px") -> None:
    if assignment is not None and len(assignment) != entities.n:
        raise FormatError(f"assignment has {len(assignment)} entries for {entities.n} entities")
    lines = [f"{entities.kind},{entities.n},{entities.dim},{units}"]
    for i in range(entities.n):
        fields = [str(i), repr(float(entities.positions[i, 0])), repr(float(entities.positions[i, 1]))]
        fields += [repr(float(v)) for v in entities.features[i]]
        if assignment is not None:
            fields.append(str(int(assignment[i])))
        lines.append(",".join(fields))
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_entities(path):
    """Read an entity file; returns ``(EntitySet, assignment or None)``."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    if len(header) not in (3, 4):
        raise FormatError(f"{path}:1: header must be 'kind,n,d[,units]', got {','.join(header)!r}")
    kind = header[0].strip()
    try:
        n, d = int(header[1]), int(header[2])
    except ValueError:
        raise FormatError(f"{path}:1: n and d must be integers") from None
    if kind not in ("cell", "tissue"):
        raise FormatError(f"{path}:1: unknown entity kind {kind!r}")
    if n < 1 or d < 1:
        raise FormatError(f"{path}:1: n and d must be positive")
    body = [(lineno, r) for lineno, r in enumerate(rows[1:], start=2) if r]
    if len(body) != n:
        raise FormatError(f"{path}: header declares {n} rows, found {len(body)}")
    with_assign = len(body[0][1]) == d + 4
    width = d + 4 if with_assign else d + 3
    positions = np.empty((n, 2))
    features = np.empty((n, d))
    assignment = np.empty(n, dtype=np.int64) if with_assign else None
    seen = set()
    for lineno, row in body:
        if len(row) != width:
            raise FormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            ident = int(row[0])
            values = [float(v) for v in row[1:d + 3]]
            tissue = int(row[d + 3]) if with_assign else None
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if ident in seen:
            raise FormatError(f"{path}:{lineno}: duplicate id {ident}")
        if not 0 <= ident < n:
            raise FormatError(f"{path}:{lineno}: id {ident} outside 0..{n - 1}")
        if not all(math.isfinite(v) for v in values):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        seen.add(ident)
        positions[ident] = values[:2]
        features[ident] = values[2:]
        if with_assign:
            assignment[ident] = tissue
    return EntitySet(kind, positions, features), assignment


# binary containers

def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        code, arr = b"f", arr.astype("<f8")
    elif arr.dtype.kind in "iu":
        code, arr = b"i", arr.astype("<i8")
    else:
        raise FormatError(f"cannot store array of dtype {arr.dtype}")
    head = code + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def _unpack_array(payload: bytes, where: str) -> np.ndarray:
    try:
        code = payload[:1]
        (ndim,) = struct.unpack_from("<B", payload, 1)
        dims = struct.unpack_from(f"<{ndim}Q", payload, 2)
    except struct.error:
        raise FormatError(f"{where}: truncated array header") from None
    if code not in _DTYPES:
        raise FormatError(f"{where}: unknown array type {code!r}")
    offset = 2 + 8 * ndim
    count = int(np.prod(dims)) if dims else 1
    if len(payload) - offset != count * 8:
        raise FormatError(f"{where}: array payload size does not match shape {dims}")
    return np.frombuffer(payload, dtype=_DTYPES[code], offset=offset).reshape(dims).copy()


def _write_container(magic: bytes, sections: "OrderedDict[str, bytes]") -> bytes:
    parts = [magic, struct.pack("<II", FORMAT_VERSION, len(sections))]
    for name, payload in sections.items():
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<Q", len(payload)), payload]
    return b"".join(parts)


def _read_container(data: bytes, magic: bytes, path) -> "OrderedDict[str, bytes]":
    if data[:4] != magic:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    try:
        version, count = struct.unpack_from("<II", data, 4)
    except struct.error:
        raise FormatError(f"{path}: truncated header") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    pos = 12
    sections = OrderedDict()
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + name_len].decode("utf-8")
            pos += 2 + name_len
            (size,) = struct.unpack_from("<Q", data, pos)
        except (struct.error, UnicodeDecodeError):
            raise FormatError(f"{path}: truncated or corrupt section header") from None
        pos += 8
        if pos + size > len(data):
            raise FormatError(f"{path}: section {name!r} is truncated")
        sections[name] = data[pos:pos + size]
        pos += size
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return sections


def graph_to_bytes(graph: HeteroGraph) -> bytes:
    sections = OrderedDict()
    sections["meta"] = json.dumps({"label": graph.label}).encode("utf-8")
    for kind, ents in (("cells", graph.cells), ("tissues", graph.tissues)):
        sections[f"{kind}.positions"] = _pack_array(ents.positions)
        sections[f"{kind}.features"] = _pack_array(ents.features)
    for rel in RELATIONS:
        e = graph.edges[rel]
        sections[f"edges.{rel}.src"] = _pack_array(e.src)
        sections[f"edges.{rel}.dst"] = _pack_array(e.dst)
    return _write_container(GRAPH_MAGIC, sections)


def graph_from_bytes(data: bytes, path="<bytes>") -> HeteroGraph:
    s = _read_container(data, GRAPH_MAGIC, path)
    try:
        meta = json.loads(s["meta"].decode("utf-8"))
        sets = {}
        for kind, key in (("cell", "cells"), ("tissue", "tissues")):
            sets[kind] = EntitySet(
                kind,
                _unpack_array(s[f"{key}.positions"], f"{path}:{key}.positions"),
                _unpack_array(s[f"{key}.features"], f"{path}:{key}.features"),
            )
        edges = {
            rel: RelationEdges(
                rel,
                _unpack_array(s[f"edges.{rel}.src"], f"{path}:{rel}"),
                _unpack_array(s[f"edges.{rel}.dst"], f"{path}:{rel}"),
            )
            for rel in RELATIONS
        }
    except KeyError as exc:
        raise FormatError(f"{path}: missing section {exc}") from None
    return HeteroGraph(sets["cell"], sets["tissue"], edges, meta.get("label"))


def save_graph(path, graph: HeteroGraph) -> None:
    atomic_write(path, graph_to_bytes(graph))


def load_graph(path) -> HeteroGraph:
    return graph_from_bytes(Path(path).read_bytes(), path)


def save_checkpoint(path, model: HGModel, extra: Optional[dict] = None) -> None:
    sections = OrderedDict()
    sections["config"] = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    sections["extra"] = json.dumps(extra or {}, sort_keys=True).encode("utf-8")
    for name, t in model.named_parameters().items():
        sections[f"param/{name}"] = _pack_array(t.data)
    atomic_write(path, _write_container(CHECKPOINT_MAGIC, sections))


def load_checkpoint(path, with_extra: bool = False):
    s = _read_container(Path(path).read_bytes(), CHECKPOINT_MAGIC, path)
    try:
        config = ModelConfig(**json.loads(s["config"].decode("utf-8")))
        extra = json.loads(s["extra"].decode("utf-8")) if "extra" in s else {}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad config section: {exc}") from None
    values = {
        name[len("param/"):]: _unpack_array(payload, f"{path}:{name}")
        for name, payload in s.items()
        if name.startswith("param/")
    }
    try:
        model = HGModel(config, values)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return (model, extra) if with_extra else model


# dataset manifests: one row per sample, "name,label,split"

def write_manifest(path, rows) -> None:
    lines = ["name,label,split"] + [f"{name},{int(label)},{split}" for name, label, split in rows]
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_manifest(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["name", "label", "split"]:
            raise FormatError(f"{path}: header must be name,label,split")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((row["name"], int(row["label"]), row["split"]))
            except (TypeError, ValueError):
                raise FormatError(f"{path}:{lineno}: malformed row") from None
    return rows


def write_predictions(path, preds, labels) -> None:
    lines = ["pred,label"] + [f"{int(p)},{int(y)}" for p, y in zip(preds, labels)]
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_predictions(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["pred", "label"]:
            raise FormatError(f"{path}: header must be pred,label")
        preds, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                preds.append(int(row["pred"]))
                labels.append(int(row["label"]))
            except (TypeError, ValueError):
                raise FormatError(f"{path}:{lineno}: malformed row") from None
    return np.array(preds, dtype=np.int64), np.array(labels, dtype=np.int64)
