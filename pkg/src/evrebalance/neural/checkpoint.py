"""Binary checkpoint format for named float64 parameter arrays.

Layout (all integers little-endian)::

    8 bytes   magic  b"EVRBCKPT"
    u32       format version
    u32       number of arrays
    per array: u16 name length, name (utf-8), u8 ndim, ndim x u32 dims
    float64   parameter block, arrays concatenated in header order (little-endian)
    u32       CRC-32 of everything above
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .mlp import Mlp

MAGIC = b"EVRBCKPT"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupted or incompatible checkpoint."""


def write_arrays(path: Union[str, Path], arrays: Sequence[tuple[str, np.ndarray]]) -> None:
    head = bytearray(MAGIC)
    head += struct.pack("<II", VERSION, len(arrays))
    for name, a in arrays:
        raw = name.encode("utf-8")
        head += struct.pack("<H", len(raw)) + raw
        head += struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    blob = bytes(head) + body
    Path(path).write_bytes(blob + struct.pack("<I", zlib.crc32(blob)))


def read_arrays(path: Union[str, Path]) -> list[tuple[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"checkpoint {path} truncated while reading {what}: "
                                  f"expected at least {pos + n} bytes, file has {len(blob)}")
        out = blob[pos:pos + n]
        pos += n
        return out

    if take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, n = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointError(f"checkpoint {path} has format version {version}, expected {VERSION}")
    header = []
    for _ in range(n):
        (ln,) = struct.unpack("<H", take(2, "header"))
        name = take(ln, "header").decode("utf-8")
        (nd,) = struct.unpack("<B", take(1, "header"))
        dims = struct.unpack(f"<{nd}I", take(4 * nd, "header"))
        header.append((name, tuple(dims)))
    n_values = sum(int(np.prod(d)) if d else 1 for _, d in header)
    expected = pos + 8 * n_values + 4
    if len(blob) != expected:
        raise CheckpointError(f"checkpoint {path} has {len(blob)} bytes, expected {expected} bytes "
                              f"for the shapes in its header")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != zlib.crc32(blob[:-4]):
        raise CheckpointError(f"checkpoint {path} failed its checksum")
    out = []
    for name, dims in header:
        k = int(np.prod(dims)) if dims else 1
        a = np.frombuffer(blob, dtype="<f8", count=k, offset=pos).astype(np.float64).reshape(dims)
        pos += 8 * k
        out.append((name, a))
    return out


def shape_signature(arrays: Sequence[tuple[str, np.ndarray]]) -> str:
    return ", ".join(f"{name}{list(a.shape)}" for name, a in arrays)


def assign_arrays(targets: Sequence[tuple[str, np.ndarray]], loaded: Sequence[tuple[str, np.ndarray]],
                  source: str = "checkpoint") -> None:
    """Copy ``loaded`` into ``targets`` in place after checking names and shapes."""
    want = [(n, a.shape) for n, a in targets]
    got = [(n, a.shape) for n, a in loaded]
    if want != got:
        raise CheckpointError(f"shape mismatch between {source} and model:\n  {source}: {shape_signature(loaded)}"
                              f"\n  model: {shape_signature(targets)}")
    for (_, dst), (_, src) in zip(targets, loaded):
        dst[...] = src


def save_weights(net: Mlp, path: Union[str, Path]) -> None:
    write_arrays(path, net.named_params())


def load_weights(path: Union[str, Path], like: Optional[Mlp] = None) -> Mlp:
    """Rebuild an :class:`Mlp` from a checkpoint; with ``like``, shapes must match it."""
    arrays = read_arrays(path)
    if like is not None:
        net = like.copy()
        assign_arrays(net.named_params(), arrays, str(path))
        return net
    if len(arrays) % 2 or not arrays:
        raise CheckpointError(f"{path} does not hold a weight/bias sequence")
    widths = [arrays[0][1].shape[0]] + [a.shape[1] for n, a in arrays[0::2]]
    try:
        return Mlp(widths, weights=[a for _, a in arrays])
    except ValueError as e:
        raise CheckpointError(f"{path}: {e}") from None
