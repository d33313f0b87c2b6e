"""Binary checkpoint container plus JSON sidecar manifest.

Layout (little-endian): magic "CPNN", version u32=1, entry count u32;
per entry: name length u16, UTF-8 name, rank u8, dims u32 x rank,
payload f32 row-major. The sidecar "<path>.manifest.json" records the
model kind, spec widths, and creation seed.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Parameter, ParameterSet

MAGIC = b"CPNN"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    path: str | Path,
    params: ParameterSet,
    kind: str,
    widths: dict | None = None,
    seed: int | None = None,
    extra: dict | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            arr = np.ascontiguousarray(p.value, dtype=np.float32)
            f.write(struct.pack("<H", len(name)))
            f.write(name)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())
    manifest = {
        "kind": kind,
        "widths": widths or {},
        "seed": seed,
    }
    if extra:
        manifest.update(extra)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.json")


def load_manifest(path: str | Path) -> dict:
    return json.loads(manifest_path(path).read_text())


def load_checkpoint(path: str | Path) -> ParameterSet:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    off = 0
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    off = 4
    version, count = struct.unpack_from("<II", data, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    ps = ParameterSet()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", data, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        ps.add(Parameter(name, arr.astype(np.float64)))
    return ps
