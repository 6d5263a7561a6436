"""On-disk formats: the LFNO tensor container, raw ``.bin`` tensors and datasets.

Container layout::

    b"LFNO" | u32 version | u64 header length | JSON header | tensor bytes

The header lists every tensor's name, dtype, shape and byte offset into the
payload.  All multi-byte values are little-endian.  Writes go to a temporary
file that is atomically renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import ChiField, VesselSpec, VoxelGrid, read_obj, write_obj
from .spectral import PriorChannels

MAGIC = b"LFNO"
VERSION = 1
SCHEMA_VERSION = 1
BIN_MAGIC = 0x4F4E464C  # "LFNO" read as a little-endian int32
BIN_MAX_RANK = 6
UNITS = {"velocity": "m/s", "wss": "Pa", "time": "s", "length": "m", "viscosity": "Pa s"}


def atomic_write(path, data: bytes):
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


def _le(arr):
    # ascontiguousarray would promote 0-d arrays to shape (1,)
    arr = np.asarray(arr, order="C")
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def pack_container(tensors: dict, header: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = _le(np.asarray(arr))
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    head = dict(header or {})
    head["tensors"] = entries
    hb = json.dumps(head, sort_keys=True).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(hb)) + hb + b"".join(chunks)


def unpack_container(data: bytes):
    if data[:4] != MAGIC:
        raise DataError("not an LFNO container (bad magic)")
    version, n = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise DataError(f"unsupported container version {version}")
    header = json.loads(data[16 : 16 + n])
    base = 16 + n
    tensors = {}
    for e in header.pop("tensors"):
        lo = base + e["offset"]
        buf = data[lo : lo + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise DataError(f"truncated tensor {e['name']!r}")
        tensors[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header, tensors


def write_container(path, tensors, header=None):
    atomic_write(path, pack_container(tensors, header))


def read_container(path):
    return unpack_container(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# raw tensors


def pack_bin(arr) -> bytes:
    a = np.asarray(arr, dtype="<f4")
    if a.ndim > BIN_MAX_RANK:
        raise ValueError(f"rank {a.ndim} exceeds {BIN_MAX_RANK}")
    head = np.zeros(8, dtype="<i4")
    head[0], head[1] = BIN_MAGIC, a.ndim
    head[2 : 2 + a.ndim] = a.shape
    return head.tobytes() + np.ascontiguousarray(a).tobytes()


def unpack_bin(data: bytes):
    head = np.frombuffer(data[:32], dtype="<i4")
    if len(head) != 8 or head[0] != BIN_MAGIC:
        raise DataError("not a tensor .bin file (bad magic)")
    rank = int(head[1])
    shape = tuple(int(d) for d in head[2 : 2 + rank])
    arr = np.frombuffer(data[32:], dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise DataError(f"tensor payload has {arr.size} values, header says {shape}")
    return arr.reshape(shape).astype(np.float32)


def write_bin(path, arr):
    atomic_write(path, pack_bin(arr))


def read_bin(path):
    return unpack_bin(Path(path).read_bytes())


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# datasets

SAMPLE_FILES = ("input.bin", "target.bin", "chi.bin", "prior.bin", "prior_lr.bin", "wss.bin", "wall.bin", "mesh.obj", "meta.json")


def _sample_meta(s):
    return {
        "sample_id": s.sample_id,
        "split": s.split,
        "input": {"grid": s.input.grid.to_dict(), "times": s.input.times.tolist(), "shape": list(s.input.velocity.shape),
                  "meta": s.input.meta},
        "target": {"grid": s.target.grid.to_dict(), "times": s.target.times.tolist(), "shape": list(s.target.velocity.shape)},
        "chi_lr_grid": s.chi_lr.grid.to_dict(),
        "n_prior": 0 if s.prior_hr is None else int(s.prior_hr.channels.shape[0]),
        "n_vertices": int(len(s.mesh.vertices)),
        "vessel": s.vessel.to_dict(),
        "pulse": s.pulse.to_dict(),
        "provenance": s.provenance,
        "units": UNITS,
    }


def write_sample(root, sample):
    d = Path(root) / sample.split / sample.sample_id
    d.mkdir(parents=True, exist_ok=True)
    write_bin(d / "input.bin", sample.input.velocity)
    write_bin(d / "target.bin", sample.target.velocity)
    write_bin(d / "chi.bin", sample.chi_hr.values)
    empty = np.zeros((0,) + sample.target.grid.dims)
    write_bin(d / "prior.bin", empty if sample.prior_hr is None else sample.prior_hr.channels)
    write_bin(d / "prior_lr.bin", np.zeros((0,) + sample.chi_lr.grid.dims) if sample.prior_lr is None else sample.prior_lr.channels)
    write_bin(d / "wss.bin", sample.wss_truth)
    write_bin(d / "wall.bin", sample.wall)
    write_obj(sample.mesh, d / "mesh.obj")
    atomic_write(d / "meta.json", json.dumps(_sample_meta(sample), indent=1, sort_keys=True).encode())
    return {name: sha256_file(d / name) for name in SAMPLE_FILES}


def read_sample(root, split, sample_id, hashes=None):
    from .flow import FlowField, FlowSample, PulseSpec

    d = Path(root) / split / sample_id
    if hashes is not None:
        for name, h in hashes.items():
            if sha256_file(d / name) != h:
                raise DataError(f"hash mismatch for {split}/{sample_id}/{name}")
    meta = json.loads((d / "meta.json").read_text())
    grid_hr = VoxelGrid.from_dict(meta["target"]["grid"])
    grid_in = VoxelGrid.from_dict(meta["input"]["grid"])
    grid_lr = VoxelGrid.from_dict(meta["chi_lr_grid"])
    inp = FlowField(grid_in, meta["input"]["times"], read_bin(d / "input.bin"), meta["input"]["meta"])
    tgt = FlowField(grid_hr, meta["target"]["times"], read_bin(d / "target.bin"))
    chi_hr = ChiField(grid_hr, read_bin(d / "chi.bin").astype(np.uint8))
    factor = grid_lr.spacing[0] / grid_hr.spacing[0]
    f = int(round(factor))
    chi_lr = ChiField(grid_lr, chi_hr.values[::f, ::f, ::f].copy())
    e_hr = read_bin(d / "prior.bin")
    e_lr = read_bin(d / "prior_lr.bin")
    prior_hr = PriorChannels(grid_hr, e_hr) if len(e_hr) else None
    prior_lr = PriorChannels(grid_lr, e_lr) if len(e_lr) else None
    p = meta["pulse"]
    pulse = PulseSpec(p["period"], p["amplitude"], tuple(p["harmonics"]), p["phase_jitter"], p["seed"])
    return FlowSample(
        meta["sample_id"], meta["split"], inp, tgt, chi_hr, chi_lr, prior_lr, prior_hr,
        read_obj(d / "mesh.obj"), read_bin(d / "wss.bin"), read_bin(d / "wall.bin").astype(bool),
        VesselSpec.from_dict(meta["vessel"]), pulse, meta["provenance"],
    )


def manifest_path(root):
    return Path(root) / "manifest.json"


def build_manifest(cfg_dict, entries):
    return {
        "schema_version": SCHEMA_VERSION,
        "task": cfg_dict.get("task"),
        "config": cfg_dict,
        "units": UNITS,
        "samples": entries,
    }


def write_dataset(root, samples, cfg_dict):
    """Write every sample, then the manifest (the completion marker)."""
    entries = []
    for s in samples:
        entries.append({"split": s.split, "sample_id": s.sample_id, "files": write_sample(root, s)})
    manifest = build_manifest(cfg_dict, entries)
    atomic_write(manifest_path(root), json.dumps(manifest, indent=1, sort_keys=True).encode())
    return manifest


def load_manifest(root):
    p = manifest_path(root)
    if not p.exists():
        raise DataError(f"no dataset manifest at {p}")
    m = json.loads(p.read_text())
    if m.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"manifest schema version {m.get('schema_version')} != {SCHEMA_VERSION}")
    return m


def read_dataset(root, split=None, verify=True):
    m = load_manifest(root)
    out = []
    for e in m["samples"]:
        if split is not None and e["split"] != split:
            continue
        out.append(read_sample(root, e["split"], e["sample_id"], e["files"] if verify else None))
    return out


def manifest_digest(root):
    return hashlib.sha256(manifest_path(root).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params, header, opt_state=None):
    tensors = {f"param/{k}": v for k, v in params.items()}
    if opt_state is not None:
        for k, v in opt_state.items():
            tensors[f"opt/{k}"] = v
    write_container(path, tensors, header)


def load_checkpoint(path):
    header, tensors = read_container(path)
    params = {k[6:]: v for k, v in tensors.items() if k.startswith("param/")}
    opt = {k[4:]: v for k, v in tensors.items() if k.startswith("opt/")}
    return header, params, opt or None
