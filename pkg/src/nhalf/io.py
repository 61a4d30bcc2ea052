"""Binary container formats for checkpoints and fused models.

Checkpoint container ("NHB1"):
    magic "NHB1" | u32 LE header length | canonical JSON header | payload.
    The header carries the architecture, clip, per-block epsilon and a
    tensor directory (name, shape, dtype "<f8", offset into the payload);
    payload sections are raw little-endian float64 in directory order.

Fused model container ("NHF1"):
    magic "NHF1" | u16 LE version | u32 LE header length | canonical JSON
    header (config, shape plan, bit-width report, tie flags) | per-block
    sections | u32 LE CRC32 of every preceding byte.
    Each block section is the packed weight words (LSB-first bits, rows
    padded to 64-bit words) followed, for full blocks, by one 8-byte rule
    record per channel: pos/neg mode bytes, two i16 LE thresholds and two
    +-1 saturation bytes.

Both writers are deterministic: identical objects serialize to identical
bytes (headers use sorted-key compact JSON).
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    FormatError,
    TruncatedError,
    VersionError,
)
from .fusion import BranchMode, FusedChannelRule
from .model import (
    FORMAT_VERSION,
    Checkpoint,
    CheckpointBlock,
    FusedBlock,
    FusedModel,
    config_from_dict,
    config_to_dict,
    plan_from_dict,
    plan_to_dict,
    report_from_dict,
    report_to_dict,
)
from .reference import ActivationParams
from .tensors import BitTensor, Shape

CHECKPOINT_MAGIC = b"NHB1"
FUSED_MAGIC = b"NHF1"

_PARAM_FIELDS = ("gamma", "beta", "mu", "sigma_sq", "prelu_slope")
_RULE_STRUCT = struct.Struct("<BBhhbb")


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


# ---------------------------------------------------------------------------
# checkpoint container


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    directory = []
    payload = bytearray()
    for i, block in enumerate(ckpt.blocks):
        entries = [("weight", np.asarray(block.weight, dtype=np.float64))]
        if block.params is not None:
            entries += [(f, getattr(block.params, f)) for f in _PARAM_FIELDS]
        for field, arr in entries:
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            directory.append(
                {
                    "name": f"block{i}.{field}",
                    "shape": list(np.asarray(arr).shape),
                    "dtype": "<f8",
                    "offset": len(payload),
                }
            )
            payload.extend(raw)
    header = _canonical_json(
        {
            "format_version": ckpt.format_version,
            "architecture": config_to_dict(ckpt.config),
            "clip": ckpt.config.clip,
            "epsilon": [
                None if b.params is None else b.params.epsilon for b in ckpt.blocks
            ],
            "tensors": directory,
        }
    )
    return CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + bytes(payload)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 8:
        raise TruncatedError("checkpoint shorter than its fixed prologue")
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"expected magic {CHECKPOINT_MAGIC!r}")
    (header_len,) = struct.unpack_from("<I", data, 4)
    header_end = 8 + header_len
    if len(data) < header_end:
        raise TruncatedError("checkpoint header is cut off")
    try:
        header = json.loads(data[8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint header is not valid JSON: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint version {header.get('format_version')}")

    config = config_from_dict(header["architecture"])
    if header.get("clip") != config.clip:
        raise FormatError("header clip disagrees with the architecture clip")
    payload = data[header_end:]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        if entry["dtype"] != "<f8":
            raise FormatError(f"unsupported tensor dtype {entry['dtype']}")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(payload):
            raise TruncatedError(f"tensor {entry['name']} extends past end of file")
        arr = np.frombuffer(payload[start:end], dtype="<f8").reshape(entry["shape"])
        tensors[entry["name"]] = arr

    epsilons = header["epsilon"]
    if len(epsilons) != len(config.blocks):
        raise FormatError("epsilon list length disagrees with the block count")
    blocks = []
    for i, spec in enumerate(config.blocks):
        try:
            weight = tensors[f"block{i}.weight"]
        except KeyError as exc:
            raise FormatError(f"missing tensor block{i}.weight") from exc
        params = None
        if spec.kind != "half":
            try:
                fields = {f: tensors[f"block{i}.{f}"] for f in _PARAM_FIELDS}
            except KeyError as exc:
                raise FormatError(f"missing activation tensor for block {i}") from exc
            params = ActivationParams(
                **fields, epsilon=float(epsilons[i]), clip=config.clip
            )
        blocks.append(CheckpointBlock(weight, params))
    return Checkpoint(config, tuple(blocks), header["format_version"])


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# fused model container


def fused_to_bytes(model: FusedModel) -> bytes:
    header = _canonical_json(
        {
            "config": config_to_dict(model.config),
            "plan": plan_to_dict(model.plan),
            "report": report_to_dict(model.report),
            "tie_flags": [
                None if b.tie_flags is None else list(b.tie_flags) for b in model.blocks
            ],
        }
    )
    out = bytearray()
    out += FUSED_MAGIC
    out += struct.pack("<H", model.format_version)
    out += struct.pack("<I", len(header))
    out += header
    for block in model.blocks:
        out += block.weights.words.tobytes()
        if block.rules is not None:
            for r in block.rules:
                out += _RULE_STRUCT.pack(
                    int(r.pos_mode), int(r.neg_mode),
                    r.pos_threshold, r.neg_threshold, r.sat_hi, r.sat_lo,
                )
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def fused_from_bytes(data: bytes) -> FusedModel:
    if len(data) < 10:
        raise TruncatedError("fused model shorter than its fixed prologue")
    if data[:4] != FUSED_MAGIC:
        raise BadMagicError(f"expected magic {FUSED_MAGIC!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported fused model version {version}")
    (header_len,) = struct.unpack_from("<I", data, 6)
    header_end = 10 + header_len
    if len(data) < header_end + 4:
        raise TruncatedError("fused model header is cut off")
    try:
        header = json.loads(data[10:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"fused model header is not valid JSON: {exc}") from exc

    config = config_from_dict(header["config"])
    plan = plan_from_dict(header["plan"])
    report = report_from_dict(header["report"])
    tie_flags = header["tie_flags"]

    expected = header_end
    for spec in config.blocks:
        shape = Shape((spec.out_channels, spec.taps))
        expected += shape.rows * shape.words_per_row * 8
        if spec.kind != "half":
            expected += spec.out_channels * _RULE_STRUCT.size
    expected += 4  # trailing CRC
    if len(data) < expected:
        raise TruncatedError(f"fused model needs {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise FormatError(f"fused model has {len(data) - expected} trailing bytes")
    (stored_crc,) = struct.unpack_from("<I", data, expected - 4)
    if zlib.crc32(data[: expected - 4]) & 0xFFFFFFFF != stored_crc:
        raise ChecksumError("fused model CRC32 mismatch")

    offset = header_end
    blocks = []
    for i, spec in enumerate(config.blocks):
        shape = Shape((spec.out_channels, spec.taps))
        nbytes = shape.rows * shape.words_per_row * 8
        words = np.frombuffer(data[offset : offset + nbytes], dtype="<u8").reshape(
            shape.rows, shape.words_per_row
        )
        offset += nbytes
        weights = BitTensor(shape, words)
        if spec.kind == "half":
            blocks.append(FusedBlock(weights, None, None))
            continue
        rules = []
        for _ in range(spec.out_channels):
            pos_mode, neg_mode, t_pos, t_neg, sat_hi, sat_lo = _RULE_STRUCT.unpack_from(
                data, offset
            )
            offset += _RULE_STRUCT.size
            rules.append(
                FusedChannelRule(
                    sat_hi, sat_lo,
                    BranchMode(pos_mode), t_pos,
                    BranchMode(neg_mode), t_neg,
                    config.clip,
                )
            )
        blocks.append(FusedBlock(weights, tuple(rules), tuple(tie_flags[i])))
    return FusedModel(config, plan, tuple(blocks), report, version)


def save_fused(model: FusedModel, path) -> None:
    Path(path).write_bytes(fused_to_bytes(model))


def load_fused(path) -> FusedModel:
    return fused_from_bytes(Path(path).read_bytes())


def sniff_container(path) -> str:
    """Return "checkpoint" or "fused" from the file magic."""
    magic = Path(path).read_bytes()[:4]
    if magic == CHECKPOINT_MAGIC:
        return "checkpoint"
    if magic == FUSED_MAGIC:
        return "fused"
    raise BadMagicError(f"unknown container magic {magic!r}")
