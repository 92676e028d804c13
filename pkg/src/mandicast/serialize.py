"""Deterministic binary container for trained model banks.

Layout: a magic line carrying the format version, an 8-byte little-endian
header length, a canonical JSON header (sorted keys, compact separators),
then the raw C-order bytes of every array in header-manifest order.  The
same bank always serializes to the same bytes, so artifact digests are
meaningful.  Loading a file with any other version fails loudly, naming
both the found and the supported version.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError, FormatVersionError
from .learners import _SUB_KINDS, ModelBank, ModelSpec

__all__ = ["FORMAT_VERSION", "dumps_model", "loads_model", "save_model", "load_model"]

FORMAT_VERSION = "mandimodel v1"
_MAGIC = b"MMOD1\n"

_ALLOWED_DTYPES = {"<f8", "<i8", "<i4", "|i1", "|u1", "|b1"}


def _normalize(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.bool_:
        return arr
    if arr.dtype.kind == "f":
        return arr.astype("<f8", copy=False)
    if arr.dtype.kind in "iu" and arr.dtype.str not in _ALLOWED_DTYPES:
        return arr.astype("<i8", copy=False)
    return arr


def _collect(bank: ModelBank) -> tuple[dict, dict[str, np.ndarray]]:
    sub_metas = []
    arrays: dict[str, np.ndarray] = {
        "class_priors": bank.class_priors,
        "degenerate": bank.degenerate,
        "weight_flags": bank.weight_flags,
        "evidence_X": bank.evidence_X,
        "evidence_anchors": bank.evidence_anchors,
        "evidence_labels": bank.evidence_labels,
        "evidence_mask": bank.evidence_mask,
    }
    for i, sub in enumerate(bank.submodels):
        meta_i, arrays_i = sub.state()
        sub_metas.append(meta_i)
        for name, arr in arrays_i.items():
            arrays[f"s{i:04d}/{name}"] = arr
    meta = {
        "family": bank.spec.family,
        "hyperparameters": bank.spec.hyperparameters,
        "seed": bank.spec.seed,
        "alpha": bank.alpha,
        "markets": bank.markets,
        "b": bank.b,
        "f": bank.f,
        "cyclic_doy": bank.cyclic_doy,
        "layout": bank.layout,
        "n_features": bank.n_features,
        "submodels": sub_metas,
    }
    return meta, {k: _normalize(v) for k, v in arrays.items()}


def dumps_model(bank: ModelBank) -> bytes:
    meta, arrays = _collect(bank)
    manifest = [
        {"name": name, "dtype": arrays[name].dtype.str, "shape": list(arrays[name].shape)}
        for name in sorted(arrays)
    ]
    header = {
        "format": "mandimodel",
        "version": 1,
        "meta": meta,
        "arrays": manifest,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [_MAGIC, struct.pack("<Q", len(blob)), blob]
    for entry in manifest:
        out.append(arrays[entry["name"]].tobytes(order="C"))
    return b"".join(out)


def loads_model(data: bytes) -> ModelBank:
    if len(data) < len(_MAGIC) + 8 or not data.startswith(b"MMOD"):
        raise FormatVersionError(
            f"not a model container; expected {FORMAT_VERSION!r}"
        )
    if not data.startswith(_MAGIC):
        found = data[: data.index(b"\n") if b"\n" in data[:16] else 8].decode("latin-1")
        raise FormatVersionError(
            f"unsupported model format {found!r}; this build reads {FORMAT_VERSION!r}"
        )
    pos = len(_MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if pos + hlen > len(data):
        raise DataError("model container truncated inside header")
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"model header unreadable: {exc}") from None
    pos += hlen
    if header.get("format") != "mandimodel" or header.get("version") != 1:
        found = f"{header.get('format')} v{header.get('version')}"
        raise FormatVersionError(
            f"unsupported model format {found!r}; this build reads {FORMAT_VERSION!r}"
        )
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        if entry["dtype"] not in _ALLOWED_DTYPES:
            raise DataError(f"array {entry['name']!r} has unexpected dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(data):
            raise DataError(f"model container truncated inside array {entry['name']!r}")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
        arrays[entry["name"]] = arr
        pos += nbytes
    if pos != len(data):
        raise DataError("model container has trailing bytes after the last array")
    meta = header["meta"]
    spec = ModelSpec(
        family=meta["family"],
        hyperparameters=meta["hyperparameters"],
        seed=meta["seed"],
    )
    submodels = []
    for i, sub_meta in enumerate(meta["submodels"]):
        prefix = f"s{i:04d}/"
        local = {
            name[len(prefix):]: arr
            for name, arr in arrays.items()
            if name.startswith(prefix)
        }
        kind = sub_meta["kind"]
        if kind not in _SUB_KINDS:
            raise DataError(f"model names unknown sub-model kind {kind!r}")
        submodels.append(_SUB_KINDS[kind].from_state(sub_meta, local))
    return ModelBank(
        spec=spec,
        alpha=float(meta["alpha"]),
        markets=list(meta["markets"]),
        b=int(meta["b"]),
        f=int(meta["f"]),
        cyclic_doy=bool(meta["cyclic_doy"]),
        layout=str(meta["layout"]),
        n_features=int(meta["n_features"]),
        class_priors=arrays["class_priors"],
        degenerate=arrays["degenerate"],
        weight_flags=arrays["weight_flags"],
        submodels=submodels,
        evidence_X=arrays["evidence_X"],
        evidence_anchors=arrays["evidence_anchors"],
        evidence_labels=arrays["evidence_labels"],
        evidence_mask=arrays["evidence_mask"],
    )


def save_model(bank: ModelBank, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_model(bank))


def load_model(path: str) -> ModelBank:
    with open(path, "rb") as fh:
        return loads_model(fh.read())
