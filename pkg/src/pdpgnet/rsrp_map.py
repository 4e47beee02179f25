"""Synthetic RSRP look-up tensor indexed by (anchor location, tilt index, BS).

The map stands in for a measured radio map: log-distance pathloss, a
parametric antenna lobe steered by the tilt entry, and optional log-normal
shadowing frozen at generation time.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, ParseError, SchemaError

MAGIC = b"RSRPMAP\x00"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TiltDictionary:
    """Ordered (azimuth_deg, elevation_deg) entries; index m selects entry m.

    Azimuth is an offset from the BS's base pointing direction, elevation is
    the electrical downtilt below the horizon.
    """

    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float).reshape(-1, 2)
        if len(a) < 1:
            raise ConfigError("tilt dictionary needs at least one entry")
        if len(np.unique(a, axis=0)) != len(a):
            raise ConfigError("tilt dictionary entries must be unique")
        object.__setattr__(self, "angles", a)

    @property
    def count(self) -> int:
        return len(self.angles)

    @classmethod
    def default(cls, count: int = 11, elevation_range=(2.0, 22.0)):
        el = np.linspace(elevation_range[0], elevation_range[1], count)
        return cls(np.column_stack([np.zeros(count), el]))


@dataclass(frozen=True)
class TiltGainModel:
    """Separable horizontal/vertical parabolic antenna lobe in dB."""

    max_gain_db: float = 17.0
    h_beamwidth_deg: float = 65.0
    v_beamwidth_deg: float = 10.0
    max_attenuation_db: float = 25.0
    bs_height_m: float = 25.0
    ue_height_m: float = 1.5

    def gain_db(self, d_az_deg, d_el_deg):
        a_h = np.minimum(12.0 * (d_az_deg / self.h_beamwidth_deg) ** 2, self.max_attenuation_db)
        a_v = np.minimum(12.0 * (d_el_deg / self.v_beamwidth_deg) ** 2, self.max_attenuation_db)
        return self.max_gain_db - np.minimum(a_h + a_v, self.max_attenuation_db)


@dataclass(frozen=True)
class MapGenConfig:
    area_m: tuple = (400.0, 400.0)
    grid_spacing_m: float = 5.0
    tx_power_dbm: float = 18.0
    pathloss_exponent: float = 3.76
    pathloss_ref_db: float = 15.3  # loss at 1 m
    tilt_gain: TiltGainModel = field(default_factory=TiltGainModel)
    shadowing_sigma_db: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.grid_spacing_m <= 0:
            raise ConfigError("grid_spacing_m must be > 0")
        if self.pathloss_exponent < 2:
            raise ConfigError("pathloss_exponent must be >= 2")
        if self.shadowing_sigma_db < 0:
            raise ConfigError("shadowing_sigma_db must be >= 0")
        w, h = self.area_m
        if w <= 0 or h <= 0:
            raise ConfigError("area dimensions must be positive")

    @property
    def max_rsrp_dbm(self) -> float:
        return self.tx_power_dbm + self.tilt_gain.max_gain_db

    @classmethod
    def from_dict(cls, d: dict) -> "MapGenConfig":
        d = dict(d)
        if "tilt_gain" in d and isinstance(d["tilt_gain"], dict):
            d["tilt_gain"] = TiltGainModel(**d["tilt_gain"])
        if "area_m" in d:
            d["area_m"] = tuple(float(v) for v in d["area_m"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class RsrpTensor:
    anchors: np.ndarray  # (A, 2)
    values: np.ndarray  # (A, M, N) dBm
    bs_positions: np.ndarray  # (N, 2)
    tilts: TiltDictionary

    def __post_init__(self):
        anchors = np.ascontiguousarray(self.anchors, dtype=np.float64).reshape(-1, 2)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        bs = np.ascontiguousarray(self.bs_positions, dtype=np.float64).reshape(-1, 2)
        if values.shape != (len(anchors), self.tilts.count, len(bs)):
            raise SchemaError(
                f"tensor shape {values.shape} inconsistent with "
                f"(anchors={len(anchors)}, tilts={self.tilts.count}, bs={len(bs)})"
            )
        if not np.all(np.isfinite(values)):
            raise SchemaError("RSRP tensor contains non-finite values")
        for arr in (anchors, values, bs):
            arr.flags.writeable = False
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bs_positions", bs)

    @property
    def shape(self):
        return self.values.shape

    @property
    def num_bs(self) -> int:
        return self.values.shape[2]

    @property
    def num_tilts(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RsrpTensor):
            return NotImplemented
        return (
            np.array_equal(self.anchors, other.anchors)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.bs_positions, other.bs_positions)
            and np.array_equal(self.tilts.angles, other.tilts.angles)
        )

    @cached_property
    def _tree(self):
        return cKDTree(self.anchors)

    def nearest_anchor(self, positions) -> np.ndarray:
        """Nearest anchor index per position; exact ties go to the lower index.

        Positions outside the anchor hull simply map to the closest anchor.
        """
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        k = min(4, len(self.anchors))
        dist, idx = self._tree.query(pos, k=k)
        if k == 1:
            return np.asarray(idx, dtype=np.intp).reshape(-1)
        dist = np.asarray(dist).reshape(len(pos), k)
        idx = np.asarray(idx).reshape(len(pos), k)
        tied = dist == dist[:, :1]
        return np.where(tied, idx, np.iinfo(np.intp).max).min(axis=1)

    def query(self, positions, tilt_idx) -> np.ndarray:
        """RSRP (dBm) for each position from each BS at that BS's tilt index.

        Returns shape (N,) for a single position, (K, N) for K positions.
        """
        tilt_idx = np.asarray(tilt_idx, dtype=np.intp)
        if tilt_idx.shape != (self.num_bs,):
            raise SchemaError(f"expected {self.num_bs} tilt indices, got shape {tilt_idx.shape}")
        if np.any(tilt_idx < 0) or np.any(tilt_idx >= self.num_tilts):
            raise ValueError(f"tilt indices must lie in 0..{self.num_tilts - 1}")
        single = np.asarray(positions).ndim == 1
        a = self.nearest_anchor(positions)
        out = self.values[a[:, None], tilt_idx[None, :], np.arange(self.num_bs)[None, :]]
        return out[0] if single else out

    def query_all_tilts(self, positions) -> np.ndarray:
        """(K, M, N) RSRP for every tilt entry; used by the static solvers."""
        return self.values[self.nearest_anchor(positions)]


def query_rsrp(tensor: RsrpTensor, user_pos, tilt_idx) -> np.ndarray:
    return tensor.query(user_pos, tilt_idx)


def anchor_grid(area_m, spacing) -> np.ndarray:
    """Cell-centre grid, row-major in y then x."""
    w, h = area_m
    nx = max(1, int(np.floor(w / spacing + 1e-9)))
    ny = max(1, int(np.floor(h / spacing + 1e-9)))
    xs = (np.arange(nx) + 0.5) * (w / nx)
    ys = (np.arange(ny) + 0.5) * (h / ny)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def base_azimuths(bs_positions, area_m) -> np.ndarray:
    """Each BS points at the area centre (or east if it sits on it)."""
    centre = np.asarray(area_m, dtype=float) / 2.0
    d = centre[None, :] - bs_positions
    az = np.degrees(np.arctan2(d[:, 1], d[:, 0]))
    return np.where(np.hypot(d[:, 0], d[:, 1]) < 1e-9, 0.0, az)


def _wrap_deg(x):
    return (x + 180.0) % 360.0 - 180.0


def generate_map(cfg: MapGenConfig, tilts: TiltDictionary, bs_positions) -> RsrpTensor:
    bs = np.asarray(bs_positions, dtype=float).reshape(-1, 2)
    w, h = cfg.area_m
    if len(bs) == 0:
        raise ConfigError("at least one BS position is required")
    outside = (bs[:, 0] < 0) | (bs[:, 0] > w) | (bs[:, 1] < 0) | (bs[:, 1] > h)
    if outside.any():
        raise ConfigError(f"BS positions outside the {w}x{h} m area: {bs[outside].tolist()}")

    g = cfg.tilt_gain
    anchors = anchor_grid(cfg.area_m, cfg.grid_spacing_m)
    dxy = anchors[:, None, :] - bs[None, :, :]  # (A, N, 2)
    d2 = np.hypot(dxy[..., 0], dxy[..., 1])
    dz = g.bs_height_m - g.ue_height_m
    d3 = np.sqrt(d2**2 + dz**2)
    pathloss = cfg.pathloss_ref_db + 10.0 * cfg.pathloss_exponent * np.log10(d3)

    az_to_anchor = np.degrees(np.arctan2(dxy[..., 1], dxy[..., 0]))  # (A, N)
    el_to_anchor = np.degrees(np.arctan2(dz, d2))  # positive below the horizon
    boresight_az = base_azimuths(bs, cfg.area_m)[None, None, :] + tilts.angles[None, :, 0, None]
    d_az = _wrap_deg(az_to_anchor[:, None, :] - boresight_az)  # (A, M, N)
    d_el = el_to_anchor[:, None, :] - tilts.angles[None, :, 1, None]
    gain = g.gain_db(d_az, d_el)

    values = cfg.tx_power_dbm - pathloss[:, None, :] + gain
    if cfg.shadowing_sigma_db > 0:
        # one draw per (anchor, BS): shadowing is a property of the location, not the tilt
        rng = np.random.default_rng(cfg.rng_seed)
        values = values + rng.normal(0.0, cfg.shadowing_sigma_db, size=d2.shape)[:, None, :]
    values = np.minimum(values, cfg.max_rsrp_dbm)
    return RsrpTensor(anchors=anchors, values=values, bs_positions=bs, tilts=tilts)


# --- persistence -----------------------------------------------------------
# layout (little-endian):
#   magic[8] | u32 version | u64 A | u64 M | u64 N
#   f64[A*2] anchors | f64[N*2] bs | f64[M*2] tilts
#   u64 A | u64 M | u64 N  (values section shape) | f64[A*M*N] values

_HEADER = struct.Struct("<8sIQQQ")
_SHAPE = struct.Struct("<QQQ")


def save_map(tensor: RsrpTensor, path) -> None:
    a, m, n = tensor.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, a, m, n))
        f.write(tensor.anchors.astype("<f8").tobytes())
        f.write(tensor.bs_positions.astype("<f8").tobytes())
        f.write(tensor.tilts.angles.astype("<f8").tobytes())
        f.write(_SHAPE.pack(a, m, n))
        f.write(tensor.values.astype("<f8").tobytes())


def _take(buf, offset, nbytes, what):
    if offset + nbytes > len(buf):
        raise ParseError(f"truncated map file while reading {what}: need {nbytes} bytes, "
                         f"{len(buf) - offset} left", offset)
    return buf[offset:offset + nbytes], offset + nbytes


def load_map(path) -> RsrpTensor:
    buf = Path(path).read_bytes()
    raw, off = _take(buf, 0, _HEADER.size, "header")
    magic, version, a, m, n = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ParseError("not an RSRP map file (bad magic)", 0)
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported map format version {version}")

    def floats(count, what):
        nonlocal off
        raw, off = _take(buf, off, 8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    anchors = floats(2 * a, "anchors").reshape(a, 2)
    bs = floats(2 * n, "BS positions").reshape(n, 2)
    tilts = floats(2 * m, "tilt dictionary").reshape(m, 2)
    raw, off = _take(buf, off, _SHAPE.size, "value-section shape")
    va, vm, vn = _SHAPE.unpack(raw)
    if (va, vm, vn) != (a, m, n):
        raise SchemaError(f"header declares (A, M, N)=({a}, {m}, {n}) but value section "
                          f"holds ({va}, {vm}, {vn})")
    values = floats(a * m * n, "values").reshape(a, m, n)
    if off != len(buf):
        raise ParseError(f"{len(buf) - off} trailing bytes after values", off)
    return RsrpTensor(anchors=anchors, values=values, bs_positions=bs, tilts=TiltDictionary(tilts))
