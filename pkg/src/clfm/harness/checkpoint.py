"""Text checkpoints for trained parameters.

Layout, one item per line:

    clfm-checkpoint <version>
    digest <sha256 of every following line>
    architecture <flat key=value echo of the model layout>
    seed <training seed>
    config_digest <sha256 of the effective config, or ->
    param <name> <dim,dim,...> <row-major float64 hex>
    ...
    end

Hex-encoded little-endian float64 keeps the file diffable and the round trip
bit-exact. Loading verifies the version, the payload digest, and (when the
caller supplies one) the architecture echo.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = ["Checkpoint", "CheckpointError", "checkpoint_save",
           "checkpoint_load"]

FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupted, or incompatible checkpoint."""


@dataclass
class Checkpoint:
    architecture: str
    params: dict  # name -> float64 ndarray, insertion-ordered
    seed: int = 0
    config_digest: str = "-"
    version: int = FORMAT_VERSION

    def __post_init__(self):
        clean = {}
        for name, arr in self.params.items():
            if any(c.isspace() for c in name):
                raise CheckpointError(f"parameter name {name!r} has spaces")
            clean[name] = np.asarray(arr, dtype="<f8")
        self.params = clean
        if "\n" in self.architecture:
            raise CheckpointError("architecture echo must be a single line")


def _payload_lines(ckpt: Checkpoint) -> list:
    lines = [
        f"architecture {ckpt.architecture}",
        f"seed {ckpt.seed}",
        f"config_digest {ckpt.config_digest}",
    ]
    for name, arr in ckpt.params.items():
        shape = ",".join(str(d) for d in arr.shape) or "0"
        lines.append(f"param {name} {shape} {arr.tobytes().hex()}")
    lines.append("end")
    return lines


def _digest(lines) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


def checkpoint_save(path, ckpt: Checkpoint):
    payload = _payload_lines(ckpt)
    with open(path, "w") as fh:
        fh.write(f"clfm-checkpoint {ckpt.version}\n")
        fh.write(f"digest {_digest(payload)}\n")
        for line in payload:
            fh.write(line + "\n")


def checkpoint_load(path, expected_architecture: str = None) -> Checkpoint:
    try:
        with open(path) as fh:
            lines = fh.read().split("\n")
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e}") from e
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2 or not lines[0].startswith("clfm-checkpoint "):
        raise CheckpointError("not a checkpoint file")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError) as e:
        raise CheckpointError("unreadable format version") from e
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"format version {version} not supported (expected "
            f"{FORMAT_VERSION})")
    if not lines[1].startswith("digest "):
        raise CheckpointError("missing digest line")
    stored = lines[1].split(" ", 1)[1]
    payload = lines[2:]
    if _digest(payload) != stored:
        raise CheckpointError("digest mismatch; file is corrupted")

    fields = {"architecture": None, "seed": None, "config_digest": None}
    params = {}
    saw_end = False
    for line in payload:
        if saw_end:
            raise CheckpointError("content after end marker")
        if line == "end":
            saw_end = True
            continue
        key, _, rest = line.partition(" ")
        if key in fields:
            fields[key] = rest
        elif key == "param":
            try:
                name, shape_s, hexblob = rest.split(" ")
                shape = tuple(int(d) for d in shape_s.split(","))
                arr = np.frombuffer(bytes.fromhex(hexblob), dtype="<f8")
                params[name] = arr.reshape(shape).copy()
            except ValueError as e:
                raise CheckpointError(f"bad param line: {e}") from e
        else:
            raise CheckpointError(f"unknown checkpoint line {key!r}")
    if not saw_end or any(v is None for v in fields.values()):
        raise CheckpointError("incomplete checkpoint")
    ckpt = Checkpoint(architecture=fields["architecture"], params=params,
                      seed=int(fields["seed"]),
                      config_digest=fields["config_digest"], version=version)
    if expected_architecture is not None \
            and ckpt.architecture != expected_architecture:
        raise CheckpointError(
            "architecture mismatch:\n"
            f"  checkpoint: {ckpt.architecture}\n"
            f"  expected:   {expected_architecture}")
    return ckpt
