"""Single-bus two-stage stochastic unit commitment solved by exhaustive enumeration.

First stage: on/off per unit per hour block. Second stage: merit-order dispatch per
scenario. Thermal output forced above load by committed minimums is spilled and
priced like curtailment so every dispatch balances.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

MAX_BITS = 24
CHUNK = 1 << 18


@dataclass
class Unit:
    p_min: float
    p_max: float
    marginal_cost: float
    no_load_cost: float = 0.0
    startup_cost: float = 0.0

    def __post_init__(self):
        if not 0 <= self.p_min <= self.p_max:
            raise ValueError(f"unit bounds must satisfy 0 <= p_min <= p_max, got {self.p_min}, {self.p_max}")


@dataclass
class Penalties:
    shed: float = 1000.0
    curtail: float = 40.0


@dataclass
class UCInstance:
    units: list
    load: np.ndarray                      # (T,) MW
    penalties: Penalties = field(default_factory=Penalties)

    def __post_init__(self):
        self.load = np.asarray(self.load, dtype=np.float64)
        if np.any(self.load < 0):
            raise ValueError("loads must be non-negative")
        top = max((u.marginal_cost for u in self.units), default=0.0)
        if self.penalties.shed <= top or self.penalties.curtail <= top:
            raise ValueError("penalties must exceed every marginal cost")

    @property
    def horizon(self) -> int:
        return len(self.load)

    def to_dict(self) -> dict:
        return {"units": [asdict(u) for u in self.units], "load": self.load.tolist(),
                "penalties": asdict(self.penalties)}

    @classmethod
    def from_dict(cls, d: dict) -> "UCInstance":
        return cls([Unit(**u) for u in d["units"]], np.asarray(d["load"], dtype=np.float64),
                   Penalties(**d.get("penalties", {})))


@dataclass
class Dispatch:
    output: np.ndarray      # (..., U, T)
    renewable_used: np.ndarray
    shed: np.ndarray        # (..., T)
    curtail: np.ndarray
    spill: np.ndarray
    cost: np.ndarray        # (...,) energy + penalty cost over the horizon


@dataclass
class UCDecision:
    commitment: np.ndarray          # (U, T) of 0/1
    expected_cost: float
    fixed_cost: float
    scenario_costs: np.ndarray      # (S,) dispatch cost per scenario (fixed cost excluded)
    actual_cost: float | None = None

    def to_dict(self) -> dict:
        return {"commitment": self.commitment.astype(int).tolist(), "expected_cost": self.expected_cost,
                "fixed_cost": self.fixed_cost, "scenario_costs": self.scenario_costs.tolist(),
                "actual_cost": self.actual_cost}


def dispatch(commitment, load, renewable, units, penalties: Penalties) -> Dispatch:
    """Merit-order optimal dispatch of a (U, T) commitment, broadcast over leading axes of ``renewable``.

    Renewables go first, committed units fill the rest by ascending marginal cost, the remainder is shed.
    """
    on = np.asarray(commitment, dtype=bool)
    if on.ndim != 2:
        raise ValueError(f"commitment must be (units, hours), got shape {on.shape}")
    T = on.shape[1]
    load = np.broadcast_to(np.asarray(load, dtype=np.float64), (T,))
    ren = np.asarray(renewable, dtype=np.float64)
    ren = np.broadcast_to(ren, ren.shape[:-1] + (T,)) if ren.ndim else np.broadcast_to(ren, (T,))
    p_min = np.array([u.p_min for u in units], dtype=np.float64)[:, None] * on
    p_max = np.array([u.p_max for u in units], dtype=np.float64)[:, None] * on
    cost = np.array([u.marginal_cost for u in units], dtype=np.float64)
    residual = load - p_min.sum(axis=0)
    spill = np.broadcast_to(np.maximum(0.0, -residual), ren.shape).copy()
    residual = np.maximum(0.0, residual)
    used = np.minimum(ren, residual)
    curtail = ren - used
    residual = residual - used
    out = np.broadcast_to(p_min, ren.shape[:-1] + p_min.shape).copy()
    for u in np.argsort(cost, kind="stable"):
        take = np.minimum(residual, p_max[u] - p_min[u])
        out[..., u, :] += take
        residual = residual - take
    hourly = np.einsum("u,...ut->...t", cost, out) + penalties.shed * residual + penalties.curtail * (curtail + spill)
    return Dispatch(out, used, residual, curtail, spill, hourly.sum(axis=-1))


def dispatch_hour(on, load_t: float, renewable_t: float, units, penalties: Penalties) -> tuple:
    """Single-hour dispatch: (per-unit output, shed, curtail, spill, cost)."""
    d = dispatch(np.asarray(on)[:, None], load_t, np.array([renewable_t]), units, penalties)
    return d.output[:, 0], float(d.shed[0]), float(d.curtail[0]), float(d.spill[0]), float(d.cost)


def fixed_cost(commitment, units) -> float:
    """No-load cost of every committed hour plus startups, all units initially off."""
    on = np.asarray(commitment, dtype=np.float64)
    prev = np.concatenate([np.zeros((on.shape[0], 1)), on[:, :-1]], axis=1)
    starts = np.maximum(0.0, on - prev)
    nl = np.array([u.no_load_cost for u in units])
    su = np.array([u.startup_cost for u in units])
    return float(np.sum(nl * on.sum(axis=1)) + np.sum(su * starts.sum(axis=1)))


def _blocks(T: int, block: int) -> list:
    if block < 1:
        raise ValueError("block length must be >= 1")
    return [slice(b, min(b + block, T)) for b in range(0, T, block)]


def _state_bits(n_units: int) -> np.ndarray:
    """(2^U, U) on/off pattern per state index; unit 0 is the most significant bit."""
    s = np.arange(2 ** n_units)
    return ((s[:, None] >> np.arange(n_units - 1, -1, -1)) & 1).astype(bool)


def solve_two_stage(instance: UCInstance, scenarios, block: int = 1) -> UCDecision:
    """Minimum expected cost commitment over all schedules constant within hour blocks.

    Ties go to the lexicographically smallest hour-major schedule.
    """
    ren = np.atleast_2d(np.asarray(scenarios, dtype=np.float64))
    T, U = instance.horizon, len(instance.units)
    if ren.shape[1] != T:
        raise ValueError(f"scenario length {ren.shape[1]} != horizon {T}")
    blocks = _blocks(T, block)
    bits = U * len(blocks)
    if bits > MAX_BITS:
        raise ValueError(f"{U} units x {len(blocks)} blocks = 2^{bits} schedules exceeds 2^{MAX_BITS}; "
                         f"use a coarser block granularity")
    units, pen = instance.units, instance.penalties
    states = _state_bits(U)
    n_states, S = len(states), ren.shape[0]
    # per (block, state): summed dispatch cost over scenarios, and no-load cost
    table = np.empty((len(blocks), n_states))
    nl = np.array([u.no_load_cost for u in units])
    su = np.array([u.startup_cost for u in units])
    for k, st in enumerate(states):
        col = np.repeat(st[:, None], T, axis=1)
        hourly = _hourly_cost(col, instance.load, ren, units, pen).sum(axis=0)      # (T,)
        for b, sl in enumerate(blocks):
            table[b, k] = hourly[sl].sum()
    width = np.array([sl.stop - sl.start for sl in blocks])
    noload = (states.astype(np.float64) @ nl)[None, :] * width[:, None]
    startup = (np.maximum(0, states[None, :, :].astype(int) - states[:, None, :].astype(int)) @ su)  # [prev, next]
    n_sched = n_states ** len(blocks)
    best_idx, best_val = -1, np.inf
    radix = n_states ** np.arange(len(blocks) - 1, -1, -1)
    for start in range(0, n_sched, CHUNK):
        idx = np.arange(start, min(start + CHUNK, n_sched))
        digits = (idx[:, None] // radix[None, :]) % n_states          # (n, B) block states
        disp = table[np.arange(len(blocks))[None, :], digits].sum(axis=1) / S
        prev = np.concatenate([np.zeros((len(idx), 1), dtype=int), digits[:, :-1]], axis=1)
        fixed = noload[np.arange(len(blocks))[None, :], digits].sum(axis=1) + startup[prev, digits].sum(axis=1)
        total = disp + fixed
        j = int(np.argmin(total))
        if total[j] < best_val:
            best_val, best_idx = total[j], int(idx[j])
    digits = (best_idx // radix) % n_states
    commit = np.zeros((U, T), dtype=int)
    for b, sl in enumerate(blocks):
        commit[:, sl] = states[digits[b]][:, None]
    return evaluate_commitment(instance, commit, ren)


def _hourly_cost(commit, load, ren, units, pen) -> np.ndarray:
    d = dispatch(commit, load, ren, units, pen)
    c = np.array([u.marginal_cost for u in units])
    return np.einsum("u,...ut->...t", c, d.output) + pen.shed * d.shed + pen.curtail * (d.curtail + d.spill)


def evaluate_commitment(instance: UCInstance, commitment, scenarios) -> UCDecision:
    ren = np.atleast_2d(np.asarray(scenarios, dtype=np.float64))
    commitment = np.asarray(commitment, dtype=int)
    d = dispatch(commitment, instance.load, ren, instance.units, instance.penalties)
    fc = fixed_cost(commitment, instance.units)
    return UCDecision(commitment, float(d.cost.sum() / ren.shape[0] + fc), fc, d.cost.copy())


def redispatch(instance: UCInstance, decision: UCDecision, observed) -> Dispatch:
    return dispatch(decision.commitment, instance.load, np.asarray(observed, dtype=np.float64),
                    instance.units, instance.penalties)


def actual_cost(instance: UCInstance, decision: UCDecision, observed) -> float:
    return float(redispatch(instance, decision, observed).cost + decision.fixed_cost)


@dataclass
class DayReport:
    day: int
    expected_cost: float
    actual_cost: float
    deviation: float
    shed_mwh: float
    curtail_mwh: float
    commitment: list


@dataclass
class RollingReport:
    days: list

    @property
    def mean_deviation(self) -> float:
        return float(np.mean([d.deviation for d in self.days]))

    def totals(self) -> dict:
        return {"mean_deviation": self.mean_deviation,
                "expected_cost": float(sum(d.expected_cost for d in self.days)),
                "actual_cost": float(sum(d.actual_cost for d in self.days)),
                "shed_mwh": float(sum(d.shed_mwh for d in self.days)),
                "curtail_mwh": float(sum(d.curtail_mwh for d in self.days))}

    def to_json(self) -> str:
        return json.dumps({"days": [asdict(d) for d in self.days], "totals": self.totals()}, indent=2)


def rolling_evaluation(instances: list, scenario_sets: list, observations: list, block: int = 1) -> RollingReport:
    """Solve each day, fix the commitment, re-dispatch against the observed path."""
    if not len(instances) == len(scenario_sets) == len(observations):
        raise ValueError("instances, scenario sets and observations must cover the same days")
    days = []
    for k, (inst, sc, obs) in enumerate(zip(instances, scenario_sets, observations)):
        dec = solve_two_stage(inst, sc, block)
        rd = redispatch(inst, dec, obs)
        act = float(rd.cost + dec.fixed_cost)
        dec.actual_cost = act
        days.append(DayReport(k, dec.expected_cost, act, abs(dec.expected_cost - act), float(rd.shed.sum()),
                              float(rd.curtail.sum()), dec.commitment.tolist()))
    return RollingReport(days)


@dataclass
class OutOfSample:
    average_cost: float
    worst_cost: float
    shed_mwh: float
    curtail_mwh: float


def out_of_sample_test(instance: UCInstance, decision: UCDecision, realizations) -> OutOfSample:
    R = np.atleast_2d(np.asarray(realizations, dtype=np.float64))
    d = dispatch(decision.commitment, instance.load, R, instance.units, instance.penalties)
    costs = d.cost + decision.fixed_cost
    return OutOfSample(float(costs.mean()), float(costs.max()), float(d.shed.sum()), float(d.curtail.sum()))


def toy_system(peak_load: float = 300.0, horizon: int = 24) -> UCInstance:
    """Three-unit system with a daily load shape peaking at ``peak_load`` MW."""
    h = np.arange(horizon)
    load = peak_load * (0.7 + 0.3 * np.sin(np.pi * (h - 6) / 12).clip(0)) if horizon else np.zeros(0)
    units = [Unit(40, 150, 18.0, 400.0, 1500.0),
             Unit(30, 120, 25.0, 250.0, 600.0),
             Unit(10, 80, 35.0, 100.0, 150.0)]
    return UCInstance(units, load)
