"""Versioned binary checkpoints for estimators and ensembles.

Layout (all little-endian):

  header:
    magic   4 bytes  b"SORB"
    version u16      currently 1
    backend u8       0=tabular 1=mlp 2=scalar_tabular 3=scalar_mlp 255=ensemble
    encoder u8       0=cell 1=coords 2=coords_patch
    radius  u8       patch radius (0 when not applicable)
    agg     u8       ensembles: 0=max 1=mean; members: 0
    bins    u16      num_bins N
    size    u16      ensemble member count K (0 for bare estimators)
    width   u16      map width the parameters were built against
    height  u16      map height
    seed    u32      estimator init seed
    name    u16 length + utf-8 bytes (map name, informational)

  tabular payload:   u64 pair count, then sorted int64 pair keys, then the
                     live table as float64 (pairs, 4, N+1), then the target
                     table in the same shape.
  mlp payload:       u16 layer count L, then L x (u32 in, u32 out), then the
                     live parameters W1,b1..WL,bL as float64 in order, then
                     the target parameters likewise.  Optimizer state is not
                     persisted; checkpoints are frozen parameters.
  scalar_tabular:    like tabular with (pairs, 4) value tables.
  scalar_mlp:        like mlp.
  ensemble payload:  K member records, each a complete estimator blob.

Round-trips are bit-exact: save(load(save(x))) == save(x) byte for byte.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .distval import (
    MLPEstimator,
    ScalarMLPEstimator,
    ScalarTabularEstimator,
    TabularEstimator,
    make_encoder,
)
from .ensemble import AGGREGATIONS, EnsembleConfig, ValueEnsemble
from .gridworld import GridMap

MAGIC = b"SORB"
VERSION = 1

_BACKEND_TAGS = {"tabular": 0, "mlp": 1, "scalar_tabular": 2, "scalar_mlp": 3}
_BACKEND_FROM_TAG = {v: k for k, v in _BACKEND_TAGS.items()}
_ENSEMBLE_TAG = 255
_ENCODER_TAGS = {"cell": 0, "coords": 1, "coords_patch": 2}
_ENCODER_FROM_TAG = {v: k for k, v in _ENCODER_TAGS.items()}

_HEADER = struct.Struct("<4sHBBBBHHHHI")


def _write_header(f, backend_tag, encoder_tag, radius, agg, bins, k, width, height, seed, name):
    f.write(
        _HEADER.pack(
            MAGIC, VERSION, backend_tag, encoder_tag, radius, agg, bins, k, width, height, seed
        )
    )
    raw = name.encode("utf-8")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)


def _read_header(f):
    blob = f.read(_HEADER.size)
    if len(blob) != _HEADER.size:
        raise ValueError("truncated checkpoint header")
    magic, version, backend, encoder, radius, agg, bins, k, width, height, seed = _HEADER.unpack(
        blob
    )
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (nlen,) = struct.unpack("<H", f.read(2))
    name = f.read(nlen).decode("utf-8")
    return dict(
        backend=backend,
        encoder=encoder,
        radius=radius,
        agg=agg,
        bins=bins,
        k=k,
        width=width,
        height=height,
        seed=seed,
        name=name,
    )


def _write_array(f, arr, dtype):
    f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_array(f, count, dtype):
    dt = np.dtype(dtype)
    blob = f.read(count * dt.itemsize)
    if len(blob) != count * dt.itemsize:
        raise ValueError("truncated checkpoint payload")
    return np.frombuffer(blob, dtype=dt).copy()


def _save_estimator_stream(est, f, map_name: str):
    tag = _BACKEND_TAGS[est.backend]
    encoder_tag = _ENCODER_TAGS[est.encoder_kind]
    radius = getattr(getattr(est, "encoder", None), "radius", 0)
    _write_header(
        f,
        tag,
        encoder_tag,
        radius,
        0,
        est.num_bins,
        0,
        est.grid.width,
        est.grid.height,
        est.seed,
        map_name,
    )
    if est.backend in ("tabular", "scalar_tabular"):
        keys, cur, tgt = est.state_payload()
        f.write(struct.pack("<Q", len(keys)))
        _write_array(f, keys, "<i8")
        _write_array(f, cur, "<f8")
        _write_array(f, tgt, "<f8")
    else:
        params = est.params
        f.write(struct.pack("<H", len(params) // 2))
        for w in params[0::2]:
            f.write(struct.pack("<II", w.shape[0], w.shape[1]))
        for p in params:
            _write_array(f, p, "<f8")
        for p in est.target_params:
            _write_array(f, p, "<f8")


def _load_estimator_stream(f, grid: GridMap, header=None):
    h = header or _read_header(f)
    backend = _BACKEND_FROM_TAG.get(h["backend"])
    if backend is None:
        raise ValueError(f"unknown backend tag {h['backend']}")
    if (grid.width, grid.height) != (h["width"], h["height"]):
        raise ValueError(
            f"checkpoint built for {h['width']}x{h['height']}, map is {grid.width}x{grid.height}"
        )
    bins = h["bins"]
    if backend in ("tabular", "scalar_tabular"):
        cls = TabularEstimator if backend == "tabular" else ScalarTabularEstimator
        est = cls(grid, num_bins=bins, seed=h["seed"])
        (n,) = struct.unpack("<Q", f.read(8))
        keys = _read_array(f, n, "<i8")
        shape = (n, 4, bins + 1) if backend == "tabular" else (n, 4)
        per = 4 * (bins + 1) if backend == "tabular" else 4
        cur = _read_array(f, n * per, "<f8").reshape(shape)
        tgt = _read_array(f, n * per, "<f8").reshape(shape)
        est.load_payload(keys, cur, tgt)
        return est
    encoder_kind = _ENCODER_FROM_TAG.get(h["encoder"])
    if encoder_kind not in ("coords", "coords_patch"):
        raise ValueError(f"backend {backend} with incompatible encoder tag {h['encoder']}")
    encoder = make_encoder(encoder_kind, h["width"], h["height"], max(h["radius"], 1))
    (n_layers,) = struct.unpack("<H", f.read(2))
    shapes = [struct.unpack("<II", f.read(8)) for _ in range(n_layers)]
    hidden = tuple(dout for _, dout in shapes[:-1])
    cls = MLPEstimator if backend == "mlp" else ScalarMLPEstimator
    est = cls(grid, num_bins=bins, encoder=encoder, hidden=hidden, seed=h["seed"])
    for params in (est.params, est.target_params):
        for li, (din, dout) in enumerate(shapes):
            params[2 * li] = _read_array(f, din * dout, "<f8").reshape(din, dout)
            params[2 * li + 1] = _read_array(f, dout, "<f8")
    est.adam = type(est.adam)(est.params)
    return est


def save_estimator(est, path, map_name: str | None = None):
    name = est.grid.name if map_name is None else map_name
    with open(path, "wb") as f:
        _save_estimator_stream(est, f, name)


def load_estimator(path, grid: GridMap):
    with open(path, "rb") as f:
        est = _load_estimator_stream(f, grid)
        if f.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    est.bind(grid)
    return est


def save_ensemble(ens: ValueEnsemble, path, map_name: str | None = None):
    name = ens.grid.name if map_name is None else map_name
    m0 = ens.members[0]
    with open(path, "wb") as f:
        _write_header(
            f,
            _ENSEMBLE_TAG,
            _ENCODER_TAGS[m0.encoder_kind],
            getattr(getattr(m0, "encoder", None), "radius", 0),
            AGGREGATIONS.index(ens.config.aggregation),
            m0.num_bins,
            ens.config.size,
            m0.grid.width,
            m0.grid.height,
            0,
            name,
        )
        for m in ens.members:
            _save_estimator_stream(m, f, name)


def load_ensemble(path, grid: GridMap) -> ValueEnsemble:
    with open(path, "rb") as f:
        h = _read_header(f)
        if h["backend"] != _ENSEMBLE_TAG:
            raise ValueError("not an ensemble checkpoint")
        members = [_load_estimator_stream(f, grid) for _ in range(h["k"])]
        if f.read(1):
            raise ValueError("trailing bytes after ensemble payload")
    cfg = EnsembleConfig(size=h["k"], aggregation=AGGREGATIONS[h["agg"]])
    ens = ValueEnsemble(members, cfg)
    ens.bind(grid)
    return ens


def read_map_name(path) -> str:
    """Peek at the map name recorded in any checkpoint file."""
    with open(path, "rb") as f:
        return _read_header(f)["name"]


def is_ensemble_file(path) -> bool:
    with open(path, "rb") as f:
        return _read_header(f)["backend"] == _ENSEMBLE_TAG


def roundtrip_bytes(est_or_path) -> bytes:
    """Serialize an estimator to bytes (test helper for bit-exactness)."""
    buf = io.BytesIO()
    _save_estimator_stream(est_or_path, buf, est_or_path.grid.name)
    return buf.getvalue()
