"""Checkpoint export in the "NHB1" exchange container.

Layout: magic "NHB1" | u32 LE header length | canonical JSON header
(format_version, architecture, clip, per-block epsilon, tensor directory)
| raw little-endian float64 payload sections in directory order. The writer
is deterministic, so re-exporting the same state is byte-identical and the
inference side can load the file bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import NHalfNet

CHECKPOINT_MAGIC = b"NHB1"
FORMAT_VERSION = 1
_PARAM_FIELDS = ("gamma", "beta", "mu", "sigma_sq", "prelu_slope")


class ExportError(ValueError):
    pass


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _block_tensors(net: NHalfNet, index: int) -> dict[str, np.ndarray]:
    block = net.blocks[index]
    out = {"weight": block.weight.detach().double().numpy()}
    if block.full:
        out["gamma"] = block.bn.weight.detach().double().numpy()
        out["beta"] = block.bn.bias.detach().double().numpy()
        out["mu"] = block.bn.running_mean.detach().double().numpy()
        out["sigma_sq"] = block.bn.running_var.detach().double().numpy()
        out["prelu_slope"] = block.prelu.weight.detach().double().numpy()
    return out


def checkpoint_bytes(net: NHalfNet) -> bytes:
    """Serialize a trained net (eval-time semantics) to the exchange format."""
    if not net.use_half_block:
        raise ExportError(
            "export requires the half block: without it the final fusion has no "
            "trailing Sign and the checkpoint cannot compile to an integer model"
        )
    architecture = net.architecture
    directory = []
    payload = bytearray()
    epsilons = []
    for i, spec in enumerate(architecture.blocks):
        tensors = _block_tensors(net, i)
        expected = (
            (spec.out_channels, spec.in_channels, spec.kernel_size)
            if spec.is_1d
            else (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
        )
        if tensors["weight"].shape != expected:
            raise ExportError(
                f"block {i}: weight shape {tensors['weight'].shape} does not match "
                f"the architecture shape {expected}"
            )
        entries = [("weight", tensors["weight"])]
        if spec.kind == "half":
            epsilons.append(None)
        else:
            epsilons.append(float(net.blocks[i].bn.eps))
            entries += [(f, tensors[f]) for f in _PARAM_FIELDS]
        for field, arr in entries:
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            directory.append(
                {
                    "name": f"block{i}.{field}",
                    "shape": list(arr.shape),
                    "dtype": "<f8",
                    "offset": len(payload),
                }
            )
            payload.extend(raw)
    header = _canonical_json(
        {
            "format_version": FORMAT_VERSION,
            "architecture": architecture.to_dict(),
            "clip": architecture.clip,
            "epsilon": epsilons,
            "tensors": directory,
        }
    )
    return CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + bytes(payload)


def export_checkpoint(net: NHalfNet, path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(net))
    return path
