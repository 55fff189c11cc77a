"""Seeded statistical experiments over the sampled executor, with CSV
output for plotting.

Runs are independent: the randomness of run ``i`` derives from
(experiment seed, i), so any parallel schedule produces identical results.
The bundled engine case study has vectorised fast paths (the in-isolation
cooling-slot census used by the single-slot and iterated interception
families, and a composed offset-attack kernel); both are validated against
the general interpreter in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import casestudy
from .lang import ModelFile, parse_model_file
from .lts import ExplorationBudget, ZenoError, run_sampled
from .model import SystemConfig, compose_attack

Z95 = 1.959963984540054


def wilson(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson 95% score interval for a binomial rate."""
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, centre - half), min(1.0, centre + half))


@dataclass(frozen=True)
class Experiment:
    model: str  # path to a .ccpa file, or "engine" for the bundled model
    attack: str
    runs: int
    horizon: int
    seed: int
    success: str  # attack-action-fired | unsafe-reached | alarm-fired | dead-reached
    params: dict[str, float] = field(default_factory=dict)
    sweep: tuple[str, int, int] | None = None  # (param, lo, hi) inclusive
    mode: str = "auto"  # auto | isolation | composed
    output: str | None = None

    def __post_init__(self) -> None:
        if self.runs < 1 or self.horizon < 1:
            raise ValueError("runs and horizon must be at least 1")


@dataclass
class AggregateRow:
    param: float
    successes: int
    runs: int
    errors: int

    @property
    def rate(self) -> float:
        n = self.runs - self.errors
        return self.successes / n if n else 0.0

    def ci(self) -> tuple[float, float]:
        return wilson(self.successes, self.runs - self.errors)


@dataclass
class AggregateTable:
    rows: list[AggregateRow]

    def csv(self) -> str:
        out = ["param,rate,ci_lo,ci_hi,runs,errors"]
        for r in self.rows:
            lo, hi = r.ci()
            out.append(
                f"{r.param:g},{r.rate:.6f},{lo:.6f},{hi:.6f},{r.runs},{r.errors}"
            )
        return "\n".join(out) + "\n"


def emit_csv(table: AggregateTable, path: str | Path) -> None:
    if not table.rows:
        raise ValueError("empty sweep")
    Path(path).write_text(table.csv())


# ---------------------------------------------------------------------------
# Engine-model kernels
# ---------------------------------------------------------------------------
#
# Draws are addressed per (run, slot, purpose): column 2(s-1) holds the
# sensor-read double of slot s and column 2(s-1)+1 its tick noise (the
# offset kernel uses a third column for the read race).  The test suite
# feeds the same matrix to the general interpreter through an addressed
# mode and checks the trajectories coincide exactly.

DELTA = 0.4
EPSI = 0.1


def draw_matrix(seed: int, runs: int, horizon: int, cols: int) -> np.ndarray:
    gens = [
        np.random.Generator(np.random.Philox(key=(seed << 32) | i))
        for i in range(runs)
    ]
    return np.stack([g.random(cols * horizon) for g in gens])


def _uniform(lo, width, d):
    return lo + width * d


def engine_isolation_census(
    runs: int,
    horizon: int,
    seed: int,
    raw: np.ndarray | None = None,
    return_temps: bool = False,
):
    """Simulate the bundled engine system in isolation.

    Returns (writes_on, alarms): boolean arrays of shape (runs, horizon+2)
    where writes_on[r, s] marks a cool=on command in slot s (s >= 1).
    """
    if raw is None:
        raw = draw_matrix(seed, runs, horizon + 1, 2)
    temp = np.zeros(runs)
    stress = np.zeros(runs, dtype=np.int8)
    # phase: 0 idle, 1..5 cooling countdown (check when it hits 1)
    phase = np.zeros(runs, dtype=np.int8)
    cool_on = np.zeros(runs, dtype=bool)
    writes_on = np.zeros((runs, horizon + 2), dtype=bool)
    alarms = np.zeros((runs, horizon + 2), dtype=bool)
    temps = np.zeros((runs, horizon + 2)) if return_temps else None

    for slot in range(1, horizon + 1):
        if return_temps:
            temps[:, slot] = temp
        idle = phase == 0
        checking = phase == 1
        d = raw[:, 2 * (slot - 1)]
        sensed = _uniform(temp - EPSI, 2 * EPSI, d)
        hot = sensed > 10 + 1e-9

        trig = idle & hot
        writes_on[trig, slot] = True
        cool_on[trig] = True
        phase[trig] = 6  # 5 cooling ticks follow this slot

        keep = checking & hot
        alarms[keep, slot] = True
        phase[keep] = 6
        stopn = checking & ~hot
        cool_on[stopn] = False
        phase[stopn] = 0

        d = raw[:, 2 * (slot - 1) + 1]
        noise = _uniform(-DELTA, 2 * DELTA, d)
        heat = np.where(cool_on, -1.0, 1.0)
        new_temp = (temp + heat) + noise
        stress = np.where(temp > 9.9 + 1e-9, np.minimum(5, stress + 1), 0).astype(
            np.int8
        )
        temp = new_temp
        phase[phase > 1] -= 1
    if return_temps:
        return writes_on, alarms, temps
    return writes_on, alarms


def engine_offset_alarms(
    runs: int,
    warmup: int,
    n: int,
    k: float,
    window: int,
    seed: int,
    attack_priority: bool = True,
    raw: np.ndarray | None = None,
    return_temps: bool = False,
):
    """Simulate the engine under the warm-started offset attack and report
    whether an alarm fires within ``window`` slots after the warm-up.

    With ``attack_priority`` the attack's read wins the same-slot race with
    the genuine read (the classic integrity attack); otherwise the race is
    resolved by a fair draw, mirroring the interpreter's uniform scheduler.
    """
    horizon = warmup + window
    if raw is None:
        raw = draw_matrix(seed, runs, horizon + 1, 3)
    temp = np.zeros(runs)
    stress = np.zeros(runs, dtype=np.int8)
    phase = np.zeros(runs, dtype=np.int8)
    cool_on = np.zeros(runs, dtype=bool)
    alarm = np.zeros(runs, dtype=bool)
    temps = np.zeros((runs, horizon + 2)) if return_temps else None

    for slot in range(1, horizon + 1):
        if return_temps:
            temps[:, slot] = temp
        attack_alive = warmup + 1 <= slot <= warmup + n
        idle = phase == 0
        checking = phase == 1

        if attack_alive and not attack_priority:
            attacker_wins = raw[:, 3 * (slot - 1) + 2] < 0.5
        else:
            attacker_wins = np.ones(runs, dtype=bool)

        d = raw[:, 3 * (slot - 1)]
        sensed = _uniform(temp - EPSI, 2 * EPSI, d)
        if attack_alive:
            sensed = np.where(attacker_wins, sensed - k, sensed)
        hot = sensed > 10 + 1e-9

        trig = idle & hot
        cool_on[trig] = True
        phase[trig] = 6
        keep = checking & hot
        if slot > warmup:
            alarm |= keep
        phase[keep] = 6
        stopn = checking & ~hot
        cool_on[stopn] = False
        phase[stopn] = 0

        d = raw[:, 3 * (slot - 1) + 1]
        noise = _uniform(-DELTA, 2 * DELTA, d)
        heat = np.where(cool_on, -1.0, 1.0)
        stress = np.where(temp > 9.9 + 1e-9, np.minimum(5, stress + 1), 0).astype(
            np.int8
        )
        temp = (temp + heat) + noise
        phase[phase > 1] -= 1
    if return_temps:
        return alarm, temps
    return alarm


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def _sweep_points(e: Experiment) -> list[tuple[str, float]]:
    if e.sweep is None:
        return [("", 0.0)]
    name, lo, hi = e.sweep
    return [(name, float(v)) for v in range(lo, hi + 1)]


def run_experiment(e: Experiment, jobs: int = 1) -> AggregateTable:
    """Deterministic for a fixed seed and any worker count; per-run
    streams derive from (seed, run index)."""
    if e.model == "engine" and _fast_path(e):
        return _run_fast(e)
    return _run_generic(e, jobs)


def _fast_path(e: Experiment) -> bool:
    if e.mode == "composed":
        return e.attack == "b_warmup"
    if e.attack in ("a_dos", "a_dos_iter") and e.success == "attack-action-fired":
        return True
    if e.attack == "b_warmup" and e.success == "alarm-fired":
        return True
    return False


def _run_fast(e: Experiment) -> AggregateTable:
    rows: list[AggregateRow] = []
    if e.attack in ("a_dos", "a_dos_iter"):
        writes, _alarms = engine_isolation_census(e.runs, e.horizon, e.seed)
        if e.attack == "a_dos":
            sweep = _sweep_points(e)
            for _, mval in sweep:
                mm = int(e.params.get("m", mval))
                hits = int(writes[:, mm].sum())
                rows.append(AggregateRow(float(mm), hits, e.runs, 0))
        else:
            m0 = int(e.params["m"])
            for _, lval in _sweep_points(e):
                ln = int(e.params.get("len", lval) if e.sweep else e.params["len"])
                if e.sweep and e.sweep[0] == "len":
                    ln = int(lval)
                window = writes[:, m0 : min(m0 + ln, e.horizon + 1)]
                hits = int(window.any(axis=1).sum())
                rows.append(AggregateRow(float(ln), hits, e.runs, 0))
    else:  # b_warmup
        for pname, pval in _sweep_points(e):
            nn = int(e.params.get("n", 0))
            kk = float(e.params.get("k", 2.0))
            if pname == "n":
                nn = int(pval)
            elif pname == "k":
                kk = float(pval)
            if nn < 1:
                raise ValueError("b_warmup needs n >= 1")
            alarm = engine_offset_alarms(e.runs, 300, nn, kk, e.horizon, e.seed)
            rows.append(
                AggregateRow(float(pval if pname else nn), int(alarm.sum()), e.runs, 0)
            )
    return AggregateTable(rows)


def _load_model(e: Experiment) -> ModelFile:
    if e.model == "engine":
        return casestudy.load()
    return parse_model_file(e.model)


def _one_run(comp, budget, seed: int, run_idx: int, success: str) -> int:
    """1 success, 0 failure, -1 error; independent stream per run index."""
    rng = np.random.Generator(np.random.Philox(key=(seed << 32) | run_idx))
    hit = [False]
    obs = _success_observer(success, hit)
    try:
        run_sampled(comp, budget, rng, observer=obs)
    except ZenoError:
        return -1
    return 1 if hit[0] else 0


def _run_generic(e: Experiment, jobs: int = 1) -> AggregateTable:
    model = _load_model(e)
    sys_cfg = model.system("Sys" if "Sys" in model.systems else None)
    rows: list[AggregateRow] = []
    for pname, pval in _sweep_points(e):
        params = dict(e.params)
        if pname:
            params[pname] = pval
        attack = model.instantiate(e.attack, params)
        comp = compose_attack(sys_cfg, attack, model.defs)
        budget = ExplorationBudget(horizon=e.horizon, palette=model.palette())
        if jobs > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(
                    pool.map(
                        lambda i: _one_run(comp, budget, e.seed, i, e.success),
                        range(e.runs),
                    )
                )
        else:
            outcomes = [
                _one_run(comp, budget, e.seed, i, e.success) for i in range(e.runs)
            ]
        successes = sum(1 for o in outcomes if o == 1)
        errors = sum(1 for o in outcomes if o == -1)
        rows.append(AggregateRow(pval if pname else 0.0, successes, e.runs, errors))
    return AggregateTable(rows)


def _success_observer(kind: str, hit: list[bool]):
    def obs(step):
        if kind == "attack-action-fired":
            if step.rule in ("HSensRead", "HActWrite") or (
                step.rule == "Tau" and step.action.name is not None
            ):
                hit[0] = True
        elif kind == "unsafe-reached" and step.action.kind == "unsafe":
            hit[0] = True
        elif kind == "alarm-fired" and step.action.kind == "out":
            hit[0] = True
        elif kind == "dead-reached" and step.action.kind == "dead":
            hit[0] = True

    return obs


# ---------------------------------------------------------------------------
# Transient detection
# ---------------------------------------------------------------------------


def plateau_onset(rates: np.ndarray, window: int = 50, tol: float = 0.03) -> int | None:
    """First slot from which every ``window``-slot stretch of the per-slot
    rate curve stays within ``tol`` of the final plateau (the mean over the
    last 100 slots).  A plain 50-slot mean would smooth the cooling-cycle
    oscillation away entirely (the cycle period is ~11 slots), so the
    rolling maximum deviation is what detects the transient."""
    if len(rates) < window + 100:
        return None
    plateau = float(rates[-100:].mean())
    dev = np.abs(rates - plateau)
    roll = np.array([dev[s : s + window].max() for s in range(len(dev) - window + 1)])
    bad = np.where(roll > tol + 1e-12)[0]
    if len(bad) == 0:
        return 1
    onset = int(bad[-1]) + 2
    if onset > len(roll):
        return None
    return onset


# ---------------------------------------------------------------------------
# .exp files
# ---------------------------------------------------------------------------


def parse_experiment(path: str | Path) -> Experiment:
    """Line-oriented key = value experiment description."""
    fields: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("//")[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        fields[key.strip()] = val.strip()
    params: dict[str, float] = {}
    sweep = None
    for spec in fields.get("param", "").split(","):
        spec = spec.strip()
        if not spec:
            continue
        name, _, val = spec.partition(":")
        params[name.strip()] = float(val)
    if "sweep" in fields:
        name, _, rng = fields["sweep"].partition(":")
        lo, _, hi = rng.partition("..")
        sweep = (name.strip(), int(lo), int(hi))
    return Experiment(
        model=fields.get("model", "engine"),
        attack=fields["attack"],
        runs=int(fields.get("runs", "5000")),
        horizon=int(fields.get("horizon", "100")),
        seed=int(fields.get("seed", "1")),
        success=fields.get("success", "attack-action-fired"),
        params=params,
        sweep=sweep,
        mode=fields.get("mode", "auto"),
        output=fields.get("output"),
    )
