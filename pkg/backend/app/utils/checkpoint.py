import json
import logging
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import torch

from app.errors import CheckpointError
from app.utils.hashing import generate_hash, verify_hash

logger = logging.getLogger(__name__)

MAGIC = b"CRPCKPT1"
VERSION = 1
PREAMBLE = struct.Struct("<IQ")  # version, header length

DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.bool: "|b1",
}
TORCH_DTYPES = {code: dtype for dtype, code in DTYPES.items()}


def _tensor_bytes(tensor: torch.Tensor) -> Tuple[str, bytes]:
    if tensor.dtype not in DTYPES:
        raise CheckpointError(f"cannot store tensors of type {tensor.dtype}")
    code = DTYPES[tensor.dtype]
    return code, tensor.detach().cpu().contiguous().numpy().astype(code).tobytes()


def write_container(path: Path, metadata: Dict, tensors: Dict[str, torch.Tensor]) -> None:
    """Magic, little-endian version and header length, JSON header, then raw little-endian tensors."""
    table = []
    chunks = []
    offset = 0
    for name, tensor in tensors.items():
        code, data = _tensor_bytes(tensor)
        table.append({"name": name, "dtype": code, "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = dict(metadata, tensors=table, payload_sha256=generate_hash(payload))
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(PREAMBLE.pack(VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
    logger.info(f"Wrote checkpoint {path} ({len(table)} tensors, {len(payload)} bytes)")


def read_container(path: Path) -> Tuple[Dict, Dict[str, torch.Tensor]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    start = len(MAGIC) + PREAMBLE.size
    if len(data) < start:
        raise CheckpointError(f"{path} is truncated")
    version, header_length = PREAMBLE.unpack(data[len(MAGIC):start])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(data[start:start + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {e}")
    payload = data[start + header_length:]
    if not verify_hash(payload, header.get("payload_sha256", "")):
        raise CheckpointError(f"checkpoint payload of {path} does not match its recorded hash")

    tensors = {}
    for entry in header["tensors"]:
        if entry["dtype"] not in TORCH_DTYPES:
            raise CheckpointError(f"unknown tensor type {entry['dtype']!r} for {entry['name']}")
        chunk = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        array = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(array.copy())
    return header, tensors


def save_checkpoint(path: Path, model) -> None:
    metadata = {
        "config": model.cfg.model_dump(mode="json"),
        "token_vocabulary": model.tokens.to_list(),
        "tag_vocabulary": model.tags.to_list(),
        "empty_node_marker": model.tokens.marker,
    }
    write_container(path, metadata, model.state_dict())


def load_checkpoint(path: Path):
    from app.network.encoder import TokenVocabulary
    from app.network.model import JointModel
    from app.schemas import TrainConfig
    from app.tagging.mention_codec import TagVocabulary

    header, tensors = read_container(path)
    try:
        cfg = TrainConfig(**header["config"])
        tokens = TokenVocabulary.from_list(header["token_vocabulary"], header.get("empty_node_marker"))
        tags = TagVocabulary.from_list(header["tag_vocabulary"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"invalid checkpoint header in {path}: {e}")
    model = JointModel(tokens, tags, cfg)
    try:
        model.load_state_dict(tensors)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint tensors do not fit the model: {e}")
    model.eval()
    logger.info(f"Loaded checkpoint {path}")
    return model
