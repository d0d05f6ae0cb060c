"""Checkpoint serialization.

On-disk layout: magic bytes ``SGDS1``, one UTF-8 JSON manifest line
``{"spec": [...widths...], "tensors": [{"name":..., "shape":[...]}, ...]}``
terminated by ``\\n``, then the tensor payload as raw little-endian 32-bit
floats in manifest order. Values are float64 in memory; the 32-bit payload
round-trips bit-exactly.
"""

import json
import os
from pathlib import Path

import numpy as np

from .mlp import ParamVector

MAGIC = b"SGDS1"


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class UnrecognizedFormatError(CheckpointError):
    """File does not start with the expected magic bytes."""


class ManifestError(CheckpointError):
    """Manifest line missing, unparseable, or internally inconsistent."""


class PayloadLengthError(CheckpointError):
    """Payload byte count does not match the manifest."""


def save_params(params: ParamVector, path, spec_widths=None) -> None:
    """Write a checkpoint; ``spec_widths`` defaults to the vector's own."""
    widths = spec_widths if spec_widths is not None else params.spec_widths
    if widths is None:
        raise ValueError("spec_widths required (not carried by this ParamVector)")
    manifest = {
        "spec": [int(w) for w in widths],
        "tensors": [
            {"name": name, "shape": list(shape)} for name, shape in params.manifest
        ],
    }
    payload = params.values.astype("<f4").tobytes()
    tmp = Path(os.fspath(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(manifest, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)
    os.replace(tmp, path)


def load_params(path) -> ParamVector:
    """Read a checkpoint; the result carries the stored spec widths."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise UnrecognizedFormatError(f"{path}: unrecognized format")
    newline = blob.find(b"\n", len(MAGIC))
    if newline < 0:
        raise ManifestError(f"{path}: manifest line is not terminated")
    try:
        manifest = json.loads(blob[len(MAGIC) : newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: manifest is not valid JSON: {exc}") from exc
    if (
        not isinstance(manifest, dict)
        or "spec" not in manifest
        or "tensors" not in manifest
    ):
        raise ManifestError(f"{path}: manifest missing 'spec' or 'tensors'")
    entries = []
    count = 0
    for tensor in manifest["tensors"]:
        try:
            name = tensor["name"]
            shape = tuple(int(s) for s in tensor["shape"])
        except (TypeError, KeyError, ValueError) as exc:
            raise ManifestError(f"{path}: malformed tensor entry {tensor!r}") from exc
        entries.append((name, shape))
        count += int(np.prod(shape))
    payload = blob[newline + 1 :]
    if len(payload) != 4 * count:
        raise PayloadLengthError(
            f"{path}: payload length mismatch (got {len(payload)} bytes, "
            f"manifest implies {4 * count})"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return ParamVector(
        values, tuple(entries), spec_widths=tuple(int(w) for w in manifest["spec"])
    )
