"""Frozen-time joint association/tilt benchmarks.

Exact enumeration for tiny instances, and the two relaxed brute-force
heuristics: round-robin rate-greedy association (minimises the peak load)
and its randomised mix with max-RSRP association.

Objective units follow the environment: throughput in units of
``throughput_scale_mbps`` and loads as a fraction of the cell PRB budget, so
U = sum_n R_n / scale - lambda * max_n L_n / budget.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import EnumerationCapError, InfeasibleError
from .radio import RadioConfig, dbm_to_mw, rate_from_sinr, schedule_cells, snapshot_metrics, user_loads


@dataclass
class StaticInstance:
    combos: np.ndarray  # (C, N) tilt index per BS
    rsrp_dbm: np.ndarray  # (C, K, N)
    rates: np.ndarray  # (C, K, N) per-PRB rate of user k if served by n
    radio: RadioConfig
    throughput_scale_mbps: float = 100.0

    @property
    def num_users(self):
        return self.rates.shape[1]

    @property
    def num_cells(self):
        return self.rates.shape[2]

    @classmethod
    def from_rsrp(cls, rsrp_all_tilts, combos, radio: RadioConfig, throughput_scale_mbps=100.0):
        """Build from a (K, M, N) per-tilt RSRP view of the frozen user positions."""
        combos = np.atleast_2d(np.asarray(combos, dtype=np.intp))
        n = rsrp_all_tilts.shape[2]
        rsrp = np.stack([rsrp_all_tilts[:, c, np.arange(n)] for c in combos])  # (C, K, N)
        p = dbm_to_mw(rsrp)
        total = p.sum(axis=2, keepdims=True) + dbm_to_mw(radio.noise_dbm)
        sinr_db = 10.0 * np.log10(p / (total - p))
        rates = np.asarray(rate_from_sinr(sinr_db, radio.cqi_table), dtype=float)
        return cls(combos, rsrp, rates, radio, throughput_scale_mbps)

    @classmethod
    def from_positions(cls, tensor, positions, combos, radio, throughput_scale_mbps=100.0):
        return cls.from_rsrp(tensor.query_all_tilts(positions), combos, radio, throughput_scale_mbps)

    def evaluate(self, combo_idx, serving):
        """(throughput, max load, R_n in Mbps, L_n in PRB) for one candidate."""
        serving = np.asarray(serving, dtype=np.intp)
        cfg = self.radio
        r = self.rates[combo_idx, np.arange(len(serving)), serving]
        demand = user_loads(r, cfg.cbr_mbps, cfg.max_user_prb)
        alloc = schedule_cells(serving, demand, r, self.num_cells, cfg.cell_prb_budget)
        load, tput, _ = snapshot_metrics(serving, self.num_cells, r, alloc, cfg.edge_threshold_mbps)
        return tput.sum() / self.throughput_scale_mbps, load.max() / cfg.cell_prb_budget, tput, load


@dataclass
class StaticSolution:
    serving: np.ndarray
    tilt: np.ndarray
    objective: float
    throughput: float  # sum_n R_n / scale
    max_load: float  # max_n L_n / budget
    stats: dict = field(default_factory=dict)

    @property
    def association(self):
        from .radio import association_matrix
        return association_matrix(self.serving, len(self.tilt))

    def utility(self, lam):
        return self.throughput - lam * self.max_load


def tilt_combos(num_tilts, num_cells, count=None, rng=None):
    """Candidate tilt vectors: every combination if it fits in ``count``, else
    all uniform vectors (every BS on the same index) plus random extras."""
    total = num_tilts ** num_cells
    if count is None or total <= count:
        return np.array(list(itertools.product(range(num_tilts), repeat=num_cells)), dtype=np.intp)
    rng = rng if rng is not None else np.random.default_rng(0)
    chosen = {tuple([m] * num_cells) for m in range(num_tilts)}
    out = [tuple([m] * num_cells) for m in range(num_tilts)][:count]
    while len(out) < count:
        c = tuple(int(x) for x in rng.integers(0, num_tilts, size=num_cells))
        if c not in chosen:
            chosen.add(c)
            out.append(c)
    return np.array(out, dtype=np.intp)


def _violates(phi, serving, tput):
    """True if some serving cell has R_n <= phi; cells without users are exempt."""
    if phi is None:
        return False
    served = np.bincount(serving, minlength=len(tput)) > 0
    return bool(np.any(tput[served] <= phi))


def exact_enumerate(instance: StaticInstance, lam, phi=0.0, cap=10**6, keep_candidates=False):
    """Global maximiser of throughput - lam * max load over all (association, tilt).

    Candidates where a cell serving users has throughput R_n <= phi (Mbps) are
    discarded; ``phi=None`` disables the filter. Ties keep the first candidate
    (tilt combo outer, association in lexicographic order).
    """
    k, n = instance.num_users, instance.num_cells
    size = (n ** k) * len(instance.combos)
    if size > cap:
        raise EnumerationCapError(f"{n}^{k} associations x {len(instance.combos)} tilt combos = {size} "
                                  f"candidates exceeds the cap of {cap}")
    t0 = time.perf_counter()
    best = None
    candidates = [] if keep_candidates else None
    for c in range(len(instance.combos)):
        for assoc in itertools.product(range(n), repeat=k):
            thr, peak, tput, _ = instance.evaluate(c, assoc)
            if _violates(phi, np.asarray(assoc), tput):
                continue
            obj = thr - lam * peak
            if candidates is not None:
                candidates.append((c, assoc, obj))
            if best is None or obj > best[0]:
                best = (obj, c, assoc, thr, peak)
    if best is None:
        raise InfeasibleError(f"no candidate satisfies R_n > {phi} for every serving cell")
    obj, c, assoc, thr, peak = best
    stats = {"candidates": size, "wall_time_s": time.perf_counter() - t0}
    if candidates is not None:
        stats["candidate_list"] = candidates
    return StaticSolution(np.array(assoc, dtype=np.intp), instance.combos[c].copy(), obj, thr, peak, stats)


def _greedy_orders(rates_c):
    """Per BS, users sorted by descending rate (ties by index)."""
    return [np.argsort(-rates_c[:, n], kind="stable") for n in range(rates_c.shape[1])]


class _RoundRobin:
    """Round-robin over BSs; each turn the BS claims its best unassigned user."""

    def __init__(self, rates_c):
        self.orders = _greedy_orders(rates_c)
        self.cursor = [0] * rates_c.shape[1]
        self.turn = 0

    def claim(self, assigned):
        n = self.turn
        self.turn = (n + 1) % len(self.orders)
        order, i = self.orders[n], self.cursor[n]
        while assigned[order[i]]:
            i += 1
        self.cursor[n] = i + 1
        return order[i], n


def round_robin_association(rates_c):
    k = rates_c.shape[0]
    serving = np.empty(k, dtype=np.intp)
    assigned = np.zeros(k, dtype=bool)
    rr = _RoundRobin(rates_c)
    for _ in range(k):
        user, n = rr.claim(assigned)
        serving[user] = n
        assigned[user] = True
    return serving


def heuristic_small_lambda(instance: StaticInstance, phi=None):
    """Round-robin greedy association per tilt combo; keep the minimum peak load."""
    t0 = time.perf_counter()
    best = None
    for c in range(len(instance.combos)):
        serving = round_robin_association(instance.rates[c])
        thr, peak, tput, _ = instance.evaluate(c, serving)
        if _violates(phi, serving, tput):
            continue
        if best is None or peak < best[0]:
            best = (peak, c, serving, thr)
    if best is None:
        raise InfeasibleError(f"no tilt combo satisfies R_n > {phi} for every serving cell")
    peak, c, serving, thr = best
    return StaticSolution(serving, instance.combos[c].copy(), -peak, thr, peak,
                          {"candidates": len(instance.combos), "wall_time_s": time.perf_counter() - t0})


def fair_association(rates_c, rsrp_c, w, rng, counters=None):
    """Assign users one at a time: with probability w the next BS in round-robin
    order claims its best unassigned user, otherwise a uniformly random
    unassigned user joins its strongest-RSRP BS."""
    k = rates_c.shape[0]
    serving = np.empty(k, dtype=np.intp)
    assigned = np.zeros(k, dtype=bool)
    rr = _RoundRobin(rates_c)
    strongest = rsrp_c.argmax(axis=1)
    greedy = 0
    for _ in range(k):
        if rng.uniform() < w:
            user, n = rr.claim(assigned)
            greedy += 1
        else:
            free = np.flatnonzero(~assigned)
            user = free[rng.integers(len(free))]
            n = strongest[user]
        serving[user] = n
        assigned[user] = True
    if counters is not None:
        counters["greedy"] = counters.get("greedy", 0) + greedy
        counters["draws"] = counters.get("draws", 0) + k
    return serving


def heuristic_fair_lambda(instance: StaticInstance, w, rng, repetitions=16, phi=None):
    """Mixed association per tilt combo (and repetition); keep the best utility.

    Utility is scaled as (1 - w) * throughput - w * max load, i.e.
    (throughput - lambda * max load) / (1 + lambda) with w = lambda / (1 + lambda).
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    t0 = time.perf_counter()
    counters = {}
    reps = 1 if w in (0.0, 1.0) else repetitions
    best = None
    for c in range(len(instance.combos)):
        for _ in range(reps):
            serving = fair_association(instance.rates[c], instance.rsrp_dbm[c], w, rng, counters)
            thr, peak, tput, _ = instance.evaluate(c, serving)
            if _violates(phi, serving, tput):
                continue
            u = (1.0 - w) * thr - w * peak
            if best is None or u > best[0]:
                best = (u, c, serving, thr, peak)
    if best is None:
        raise InfeasibleError(f"no candidate satisfies R_n > {phi} for every serving cell")
    u, c, serving, thr, peak = best
    stats = {"candidates": len(instance.combos) * reps, "wall_time_s": time.perf_counter() - t0, **counters}
    return StaticSolution(serving, instance.combos[c].copy(), u, thr, peak, stats)


def periodic_static_policy(env, solver, period_ticks, total_ticks, combos, seed=None, on_tick=None):
    """Drive ``env`` with oracle snapshots.

    Every tick the users move and the solver sees the true positions. On
    period boundaries it may choose any combo in ``combos``; in between the
    tilt is held and only the association is re-solved. The chosen (I, b) are
    imposed directly, without A3.
    """
    if env.snapshot is None:
        env.reset(seed if seed is not None else 0)
    rows = []
    combos = np.atleast_2d(np.asarray(combos, dtype=np.intp))
    for t in range(total_ticks):
        pos = env.move_users()
        allowed = combos if t % period_ticks == 0 else env.tilt[None, :]
        inst = StaticInstance.from_positions(env.tensor, pos, allowed, env.radio, env.cfg.throughput_scale_mbps)
        sol = solver(inst)
        rec = env.apply_direct(sol.tilt, sol.serving)
        rec["solver_stats"] = {k: v for k, v in sol.stats.items() if k != "candidate_list"}
        rows.append(rec)
        if on_tick is not None:
            on_tick(t, rec)
    return rows
