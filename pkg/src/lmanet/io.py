"""Deterministic initialization and serialization.

Checkpoint format (LMA1, little-endian throughout):

    magic   4 bytes  b"LMA1"
    count   u32      number of tensors
    then per tensor, in order:
      name_len u16, name bytes (UTF-8)
      rank     u8
      extents  rank x u32
      data     prod(extents) float32 values

Image formats: binary PPM (P6, maxval 255) in, binary PGM (P5, maxval 255) out.

Initialization is keyed per tensor: the PRNG seed is derived from the user seed
and the tensor's full name, so adding or removing tensors never shifts the draws
of the others, and init is reproducible across processes.
"""

import hashlib
import struct

import numpy as np

from .errors import ConfigurationError, FormatError, InputError, ParameterError
from .model import Model, weight_spec

CHECKPOINT_MAGIC = b"LMA1"


def _tensor_rng(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))


def _fan(shape) -> tuple:
    if len(shape) == 1:
        return shape[0], shape[0]
    receptive = 1
    for e in shape[2:]:
        receptive *= e
    return shape[1] * receptive, shape[0] * receptive


def init_tensor(name: str, shape, seed: int) -> np.ndarray:
    """One tensor of the scheme: norm stats to identity, everything else Glorot uniform."""
    leaf = name.rsplit(".", 1)[-1]
    if leaf in ("gamma", "var"):
        return np.ones(shape, dtype=np.float32)
    if leaf in ("beta", "mean"):
        return np.zeros(shape, dtype=np.float32)
    fan_in, fan_out = _fan(shape)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = _tensor_rng(seed, name)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_weights(model: Model, seed: int = 0) -> dict:
    """Full checkpoint for a model description, keyed by flat tensor names."""
    return {name: init_tensor(name, shape, seed) for name, shape in weight_spec(model).items()}


def save_checkpoint(params: dict, path):
    """Write a name -> float32 array mapping in checkpoint order."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float32)
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise ParameterError(f"tensor name too long to serialize: {name[:40]}...")
        if arr.ndim < 1 or arr.ndim > 4:
            raise ParameterError(f"tensor {name!r} has rank {arr.ndim}, serializable ranks are 1..4")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    data = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(data)


def _take(buf: bytes, offset: int, n: int, what: str) -> tuple:
    if offset + n > len(buf):
        raise FormatError(f"truncated checkpoint while reading {what}", offset)
    return buf[offset : offset + n], offset + n


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into a name -> float32 array mapping, preserving order."""
    with open(path, "rb") as f:
        buf = f.read()
    magic, off = _take(buf, 0, 4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", 0)
    raw, off = _take(buf, off, 4, "tensor count")
    (count,) = struct.unpack("<I", raw)
    params: dict = {}
    for i in range(count):
        raw, off = _take(buf, off, 2, f"name length of tensor {i}")
        (name_len,) = struct.unpack("<H", raw)
        name_off = off
        raw, off = _take(buf, off, name_len, f"name of tensor {i}")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"tensor {i} name is not valid UTF-8", name_off) from None
        if name in params:
            raise FormatError(f"duplicate tensor name {name!r}", name_off)
        raw, off = _take(buf, off, 1, f"rank of {name!r}")
        rank = raw[0]
        if rank < 1 or rank > 4:
            raise FormatError(f"tensor {name!r} has rank {rank}, expected 1..4", off - 1)
        raw, off = _take(buf, off, 4 * rank, f"extents of {name!r}")
        shape = struct.unpack(f"<{rank}I", raw)
        if any(e == 0 for e in shape):
            raise FormatError(f"tensor {name!r} has a zero extent {shape}", off - 4 * rank)
        n_items = 1
        for e in shape:
            n_items *= e
        raw, off = _take(buf, off, 4 * n_items, f"data of {name!r}")
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after the last tensor", off)
    return params


def check_params_match(model: Model, params: dict, what: str = "checkpoint"):
    """Raise ConfigurationError naming the first tensor where params disagree with the model."""
    spec = weight_spec(model)
    for name, shape in spec.items():
        if name not in params:
            raise ConfigurationError(f"{what} is missing tensor {name!r} required by the model")
        have = tuple(np.asarray(params[name]).shape)
        if have != tuple(shape):
            raise ConfigurationError(
                f"{what} tensor {name!r} has shape {have}, model expects {tuple(shape)}"
            )
    for name in params:
        if name not in spec:
            raise ConfigurationError(f"{what} has unexpected tensor {name!r} not present in the model")


def _parse_pnm_header(buf: bytes, magic: bytes, path):
    if buf[:2] != magic:
        raise FormatError(f"{path}: not a binary {magic.decode()} file", 0)
    fields = []
    off = 2
    while len(fields) < 3:
        if off >= len(buf):
            raise FormatError("truncated header", off)
        c = buf[off : off + 1]
        if c == b"#":
            while off < len(buf) and buf[off : off + 1] != b"\n":
                off += 1
        elif c.isspace():
            off += 1
        elif c.isdigit():
            start = off
            while off < len(buf) and buf[off : off + 1].isdigit():
                off += 1
            fields.append(int(buf[start:off]))
        else:
            raise FormatError(f"unexpected byte {c!r} in header", off)
    if off >= len(buf) or not buf[off : off + 1].isspace():
        raise FormatError("expected single whitespace byte after maxval", off)
    off += 1
    return fields, off


def load_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM into a (1, 3, H, W) float32 map scaled to [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()
    (width, height, maxval), off = _parse_pnm_header(buf, b"P6", path)
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported, expected 255", 2)
    need = 3 * width * height
    if len(buf) - off < need:
        raise FormatError(
            f"pixel data truncated: expected {need} bytes, found {len(buf) - off}", off
        )
    if len(buf) - off > need:
        raise FormatError(f"{len(buf) - off - need} trailing bytes after pixel data", off + need)
    pixels = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
    arr = pixels.reshape(height, width, 3).transpose(2, 0, 1).astype(np.float32) / np.float32(255.0)
    return arr[None, :, :, :]


def save_pgm(class_map, path):
    """Write a (H, W) integer class map as a binary P5 PGM with maxval 255."""
    arr = np.asarray(class_map)
    if arr.ndim != 2:
        raise InputError(f"class map must be rank 2, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise InputError(f"class map must be integer-typed, got {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise InputError(
            f"class indices must fit in one byte, found range [{arr.min()}, {arr.max()}]"
        )
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(arr.astype(np.uint8).tobytes())
