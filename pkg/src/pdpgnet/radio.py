"""SINR, CQI rates, A3 handover, PRB scheduling and cell load/throughput."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

# 4-bit CQI spectral efficiencies (bit/s/Hz), read as Mbps per PRB at a
# nominal 1 MHz PRB; thresholds on a 2 dB grid from -6 dB.
_CQI_EFFICIENCY = (0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141,
                   2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152, 5.5547)
DEFAULT_CQI_TABLE = tuple((-6.0 + 2.0 * i, eff) for i, eff in enumerate(_CQI_EFFICIENCY))


@dataclass(frozen=True)
class CqiTable:
    thresholds_db: np.ndarray
    rates_mbps: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.thresholds_db, dtype=float)
        rt = np.asarray(self.rates_mbps, dtype=float)
        if th.ndim != 1 or th.shape != rt.shape or len(th) == 0:
            raise ConfigError("CQI table needs matching, non-empty threshold and rate columns")
        if np.any(np.diff(th) <= 0):
            raise ConfigError("CQI thresholds must be strictly increasing")
        if np.any(np.diff(rt) < 0) or np.any(rt < 0):
            raise ConfigError("CQI rates must be non-negative and non-decreasing")
        object.__setattr__(self, "thresholds_db", th)
        object.__setattr__(self, "rates_mbps", rt)

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        return cls(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))

    @classmethod
    def default(cls):
        return cls.from_pairs(DEFAULT_CQI_TABLE)

    @classmethod
    def load(cls, path):
        """Read ``threshold_db,rate_mbps_per_prb`` rows; '#' lines and a header are skipped."""
        pairs = []
        with open(path, newline="") as f:
            for row in csv.reader(f):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    pairs.append((float(row[0]), float(row[1])))
                except ValueError:
                    if pairs:
                        raise ConfigError(f"{path}: bad CQI row {row!r}") from None
        return cls.from_pairs(pairs)

    def as_pairs(self):
        return [(float(t), float(r)) for t, r in zip(self.thresholds_db, self.rates_mbps)]


@dataclass(frozen=True)
class RadioConfig:
    cbr_mbps: float = 1.0
    max_user_prb: int = 6
    cell_prb_budget: int = 100
    hysteresis_db: float = 1.0
    noise_dbm: float = -125.0
    cqi_table: CqiTable = field(default_factory=CqiTable.default)
    edge_user_threshold_kbps: float = 550.0

    def __post_init__(self):
        if not 0 < self.max_user_prb <= self.cell_prb_budget:
            raise ConfigError("need 0 < max_user_prb <= cell_prb_budget")
        if self.cbr_mbps <= 0:
            raise ConfigError("cbr_mbps must be positive")

    @property
    def edge_threshold_mbps(self) -> float:
        return self.edge_user_threshold_kbps / 1000.0

    @classmethod
    def from_dict(cls, d: dict) -> "RadioConfig":
        d = dict(d)
        table = d.pop("cqi_table", None)
        if isinstance(table, str):
            d["cqi_table"] = CqiTable.load(table)
        elif table is not None:
            d["cqi_table"] = CqiTable.from_pairs(table)
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "cbr_mbps": self.cbr_mbps,
            "max_user_prb": self.max_user_prb,
            "cell_prb_budget": self.cell_prb_budget,
            "hysteresis_db": self.hysteresis_db,
            "noise_dbm": self.noise_dbm,
            "cqi_table": self.cqi_table.as_pairs(),
            "edge_user_threshold_kbps": self.edge_user_threshold_kbps,
        }


class CioMatrix:
    """Antisymmetric matrix of cell individual offsets in dB.

    ``values[a, b]`` is the offset O_{a,b} that a user served by ``b`` must
    beat (plus hysteresis) to be handed to ``a``.
    """

    O_MIN = -12.0
    O_MAX = 12.0

    def __init__(self, values, bounds=(O_MIN, O_MAX)):
        v = np.array(values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DimensionError(f"CIO matrix must be square, got shape {v.shape}")
        if not np.array_equal(v, -v.T):
            raise ValueError("CIO matrix must be antisymmetric with zero diagonal")
        lo, hi = bounds
        if np.any(v < lo) or np.any(v > hi):
            raise ValueError(f"CIO entries must lie in [{lo}, {hi}] dB")
        v.flags.writeable = False
        self.values = v

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, n)))

    @classmethod
    def from_upper(cls, upper, n, bounds=(O_MIN, O_MAX)):
        """Fill O_{i,j} (i<j, row-major) from ``upper`` and mirror with a sign flip."""
        upper = np.asarray(upper, dtype=float)
        if upper.shape != (n * (n - 1) // 2,):
            raise DimensionError(f"expected {n * (n - 1) // 2} upper-triangle entries, got {upper.shape}")
        v = np.zeros((n, n))
        iu = np.triu_indices(n, k=1)
        v[iu] = upper
        v[(iu[1], iu[0])] = -upper
        return cls(v, bounds)

    @property
    def n(self):
        return self.values.shape[0]

    def __repr__(self):
        return f"CioMatrix({self.values.tolist()})"


def association_matrix(serving, num_cells) -> np.ndarray:
    """N x K 0/1 matrix with exactly one 1 per column."""
    serving = np.asarray(serving, dtype=np.intp)
    out = np.zeros((num_cells, len(serving)), dtype=np.int8)
    out[serving, np.arange(len(serving))] = 1
    return out


def serving_from_matrix(assoc) -> np.ndarray:
    assoc = np.asarray(assoc)
    if np.any(assoc.sum(axis=0) != 1) or np.any((assoc != 0) & (assoc != 1)):
        raise ValueError("association matrix must have exactly one 1 per user column")
    return assoc.argmax(axis=0)


def dbm_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def sinr(user_rsrp_dbm, serving, noise_dbm):
    """SINR in dB of the serving cell against all other cells plus noise.

    Works on one user (N-vector, int serving) or K users ((K, N), (K,)).
    """
    p = dbm_to_mw(user_rsrp_dbm)
    if p.ndim == 1:
        s = p[serving]
        return 10.0 * np.log10(s / (p.sum() - s + dbm_to_mw(noise_dbm)))
    serving = np.asarray(serving, dtype=np.intp)
    s = p[np.arange(len(p)), serving]
    return 10.0 * np.log10(s / (p.sum(axis=1) - s + dbm_to_mw(noise_dbm)))


def rate_from_sinr(sinr_db, cqi_table: CqiTable):
    """Per-PRB rate of the highest CQI level whose threshold is <= sinr; 0 below the table."""
    idx = np.searchsorted(cqi_table.thresholds_db, sinr_db, side="right") - 1
    rates = np.where(idx >= 0, cqi_table.rates_mbps[np.maximum(idx, 0)], 0.0)
    return rates if np.ndim(rates) else float(rates)


def user_loads(rates, cbr_mbps, max_user_prb):
    """PRB demand min(C/r, l_limit); users out of coverage (r = 0) saturate at l_limit."""
    r = np.asarray(rates, dtype=float)
    with np.errstate(divide="ignore"):
        need = np.where(r > 0, cbr_mbps / np.where(r > 0, r, 1.0), np.inf)
    return np.minimum(need, float(max_user_prb))


def a3_handover(user_rsrp_dbm, serving, cio: CioMatrix, hysteresis_db):
    """One A3 evaluation per user.

    A user served by n moves to the neighbour n' with the largest
    p_{n'} - p_n - (O_{n',n} + H) if that margin is positive; ties go to the
    lowest cell index. Returns the new serving vector and the handover mask.
    """
    p = np.asarray(user_rsrp_dbm, dtype=float)
    serving = np.asarray(serving, dtype=np.intp)
    k = np.arange(len(serving))
    margin = p - p[k, serving][:, None] - (cio.values[:, serving].T + hysteresis_db)
    margin[k, serving] = -np.inf
    target = margin.argmax(axis=1)
    moved = margin[k, target] > 0
    return np.where(moved, target, serving), moved


def _largest_remainder(shares, caps, total):
    base = np.floor(shares + 1e-9)
    base = np.minimum(base, caps)
    left = int(round(total - base.sum()))
    if left > 0:
        rem = shares - base
        rem[base >= caps] = -np.inf
        # stable: on equal remainders the better-ranked (earlier) user wins
        order = np.argsort(-rem, kind="stable")[:left]
        base[order] += 1
    return base


def schedule_prbs(demands, rates, budget):
    """PRB allocation inside one cell.

    Uncongested cells grant every demand. Otherwise users are ranked by rate
    (rank 1 = highest, ties by position) with weight K_cell - rank + 1; the
    budget is split by weight, users whose share reaches their demand are
    capped and the surplus is re-split among the rest until nothing changes.
    When all demands are whole PRBs the result is rounded to integers by
    largest remainder.
    """
    d = np.asarray(demands, dtype=float)
    r = np.asarray(rates, dtype=float)
    if d.shape != r.shape:
        raise DimensionError("demands and rates must have the same shape")
    if np.any(d < 0):
        raise ValueError("demands must be non-negative")
    if d.sum() <= budget:
        return d.copy()

    kc = len(d)
    order = np.argsort(-r, kind="stable")
    weight = np.empty(kc)
    weight[order] = kc - np.arange(kc)  # rank 1 -> weight K_cell

    alloc = np.zeros(kc)
    active = d > 0
    remaining = float(budget)
    while True:
        share = np.where(active, remaining * weight / weight[active].sum(), 0.0)
        capped = active & (share >= d)
        if not capped.any():
            alloc[active] = share[active]
            break
        alloc[capped] = d[capped]
        remaining -= d[capped].sum()
        active &= ~capped

    if np.allclose(d, np.round(d)) and float(budget).is_integer():
        # integer caps: rounding up a fractional share never exceeds its cap
        ranked = _largest_remainder(alloc[order], np.round(d[order]), budget)
        alloc[order] = ranked
    return alloc


def schedule_cells(serving, demands, rates, num_cells, budget):
    """Run :func:`schedule_prbs` per cell; uncongested cells are passed through."""
    serving = np.asarray(serving, dtype=np.intp)
    demands = np.asarray(demands, dtype=float)
    alloc = demands.copy()
    totals = np.bincount(serving, weights=demands, minlength=num_cells)
    for n in np.flatnonzero(totals > budget):
        members = np.flatnonzero(serving == n)
        alloc[members] = schedule_prbs(demands[members], rates[members], budget)
    return alloc


def snapshot_metrics(serving, num_cells, rates, allocations, edge_threshold_mbps):
    """Cell loads L_n (PRB), cell throughputs R_n (Mbps) and per-user edge flags."""
    serving = np.asarray(serving, dtype=np.intp)
    rates = np.asarray(rates, dtype=float)
    alloc = np.asarray(allocations, dtype=float)
    user_tput = rates * alloc
    load = np.bincount(serving, weights=alloc, minlength=num_cells)
    tput = np.bincount(serving, weights=user_tput, minlength=num_cells)
    return load, tput, user_tput < edge_threshold_mbps


@dataclass
class NetworkSnapshot:
    user_rsrp_dbm: np.ndarray  # (K, N)
    serving: np.ndarray  # (K,)
    sinr_db: np.ndarray
    rate_mbps_per_prb: np.ndarray
    user_demand_prb: np.ndarray  # l_k before scheduling
    user_alloc_prb: np.ndarray
    cell_demand_prb: np.ndarray  # pre-scheduling L_n, diagnostic only
    cell_load_prb: np.ndarray
    cell_throughput_mbps: np.ndarray
    edge_flags: np.ndarray

    @property
    def num_cells(self):
        return self.user_rsrp_dbm.shape[1]

    @property
    def association(self):
        return association_matrix(self.serving, self.num_cells)

    def edge_ratios(self):
        n = self.num_cells
        count = np.bincount(self.serving, minlength=n)
        edges = np.bincount(self.serving, weights=self.edge_flags.astype(float), minlength=n)
        return np.divide(edges, count, out=np.zeros(n), where=count > 0)


def evaluate_network(user_rsrp_dbm, serving, cfg: RadioConfig) -> NetworkSnapshot:
    """SINR -> rate -> demand -> scheduling -> metrics for a fixed association."""
    p = np.asarray(user_rsrp_dbm, dtype=float).reshape(-1, np.shape(user_rsrp_dbm)[-1])
    n = p.shape[1]
    serving = np.asarray(serving, dtype=np.intp)
    if len(serving):
        s = sinr(p, serving, cfg.noise_dbm)
    else:
        s = np.zeros(0)
    r = np.asarray(rate_from_sinr(s, cfg.cqi_table), dtype=float).reshape(-1)
    demand = user_loads(r, cfg.cbr_mbps, cfg.max_user_prb)
    alloc = schedule_cells(serving, demand, r, n, cfg.cell_prb_budget)
    load, tput, edge = snapshot_metrics(serving, n, r, alloc, cfg.edge_threshold_mbps)
    return NetworkSnapshot(
        user_rsrp_dbm=p, serving=serving, sinr_db=s, rate_mbps_per_prb=r,
        user_demand_prb=demand, user_alloc_prb=alloc,
        cell_demand_prb=np.bincount(serving, weights=demand, minlength=n),
        cell_load_prb=load, cell_throughput_mbps=tput, edge_flags=edge,
    )
