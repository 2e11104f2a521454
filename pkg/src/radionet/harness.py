"""Scenario runner: Monte-Carlo trials, JSON Lines records and summaries.

A ``Scenario`` names a protocol, a model, the ground truth (ID space and
active set, or population size) and the constants handed to the protocol.
``run_scenario`` runs trial t with seed ``seed + t`` and yields one record
per trial in trial order.  Correctness is judged here, from ground truth the
protocols never see.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .channel import ModelKind, derive_rng
from .circuit import C_M, Circuit, parse_circuit, simulate_circuit
from .dense import DenseConfig, dense_census, dense_leader_election
from .deterministic import det_census, det_leader_election
from .errors import (ConfigError, EmptyInput, InvalidCircuit, LeaderGroupTooSmall,
                     ModelUnsupported, SlotLimitExceeded)
from .randomized import (BETA, C_DENSITY, C_ID, MIN_D1, CheckpointSchedule, CountConfig,
                         estimate_network_size, exponential_search, make_schedule,
                         test_network_size, trivial_algorithm)

DETERMINISTIC = ("det_leader_election", "det_census")
DENSE = ("dense_leader_election", "dense_census")
RANDOMIZED = ("trivial_algorithm", "exponential_search", "test_network_size",
              "estimate_network_size")
PROTOCOLS = DETERMINISTIC + DENSE + RANDOMIZED + ("circuit",)

# CLI schedule prefixes and the kind each maps to
SCHEDULE_PREFIXES = {"geometric": "geometric", "poly": "polynomial", "polynomial": "polynomial",
                     "exp": "exponential", "exponential": "exponential",
                     "double-exp": "double_exp", "double_exp": "double_exp"}

# TNS is expected to elect inside this ratio window and to stay silent
# beyond the outer one; ratios in between accept either outcome
TNS_ELECT_RATIO = 1.5
TNS_SILENT_RATIO = 4.0

RECORD_KEYS = ("scenario", "trial", "seed", "outcome", "correct", "failed", "slot_count",
               "max_energy", "avg_energy", "energy_exact", "max_message_bytes")
OUTCOME_KEYS = ("leader_id", "estimate", "census_size", "output")
CSV_COLUMNS = ("protocol", "model", "trial", "seed", "leader_id", "estimate", "census_size", "output",
               "correct", "failed", "slot_count", "max_energy", "avg_energy", "energy_exact",
               "max_message_bytes")


@dataclass
class Scenario:
    """One experiment; every trial shares it except for the seed.

    ``big_n`` is the ID space of the deterministic and dense protocols.
    ``n`` is the number of active devices; with ``big_n`` set and ``n``
    below it, each trial draws the active set uniformly from ``[0, big_n)``.
    ``density`` sets n = ceil(density * big_n) instead.  For the randomized
    protocols and circuits ``n`` is the population size.
    """

    protocol: str
    model: str = "sender-cd"
    big_n: int | None = None
    n: int | None = None
    density: float | None = None
    seed: int = 0
    trials: int = 1
    schedule: str = "geometric:2"
    d1: int = MIN_D1
    c_id: float = float(C_ID)
    beta: int = BETA
    c: float = C_DENSITY          # TNS density threshold
    dense_c: float = 0.5          # density promise of the dense protocols
    c_m: float = float(C_M)
    slot_limit: int | None = None
    n_tilde: float | None = None  # TNS and circuit size guess; defaults to n
    preprocess: bool = False      # det_leader_election preprocessing step
    circuit: str | None = None    # path to a circuit file
    inputs: str | None = None     # circuit input bits such as "0110"; random when unset
    out: str | None = field(default=None, metadata={"echo": False})

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.metadata.get("echo", True)}


def parse_schedule(spec: str, d1: int = MIN_D1) -> CheckpointSchedule:
    """``geometric:2``, ``poly:0.5``, ``exp:2`` or ``double-exp:0.6``."""
    name, _, arg = spec.partition(":")
    kind = SCHEDULE_PREFIXES.get(name.strip().lower())
    if kind is None:
        raise ConfigError(f"unknown schedule kind {name!r}", "schedule")
    value = None
    if arg:
        try:
            value = float(arg)
        except ValueError:
            raise ConfigError(f"bad schedule parameter {arg!r}", "schedule") from None
    if kind == "geometric":
        return make_schedule(kind, d1, gamma=value)
    if kind == "exponential":
        return make_schedule(kind, d1, base=value)
    return make_schedule(kind, d1, eps=value)


@dataclass
class _Plan:
    """A validated scenario with its parsed parts; picklable for workers."""

    scenario: Scenario
    model: ModelKind
    n: int
    schedule: CheckpointSchedule | None = None
    circuit: Circuit | None = None
    bits: tuple | None = None


def _positive_int(problems, name, value, low=1):
    if value is None:
        return
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < low:
        problems.append((name, f"must be an integer >= {low}, got {value!r}"))


def validate(s: Scenario) -> _Plan:
    """Check every field before any trial runs.

    Raises ``ConfigError`` naming each bad field, and ``ModelUnsupported``
    when the protocol cannot run under the model at all.
    """
    problems: list = []
    if s.protocol not in PROTOCOLS:
        problems.append(("protocol", f"unknown protocol {s.protocol!r}; choose from {', '.join(PROTOCOLS)}"))
    try:
        model = ModelKind.parse(s.model)
    except ValueError as exc:
        problems.append(("model", str(exc)))
        model = None
    _positive_int(problems, "big_n", s.big_n)
    _positive_int(problems, "n", s.n, low=0)
    _positive_int(problems, "trials", s.trials)
    _positive_int(problems, "seed", s.seed, low=0)
    _positive_int(problems, "slot_limit", s.slot_limit)
    _positive_int(problems, "beta", s.beta)
    if s.n is not None and s.density is not None:
        problems.append(("density", "give n or density, not both"))
    if s.density is not None and not 0 < s.density <= 1:
        problems.append(("density", f"must lie in (0, 1], got {s.density}"))
    if s.density is not None and s.big_n is None:
        problems.append(("density", "needs big_n"))
    if not s.c_id > 0:
        problems.append(("c_id", "must be positive"))
    if not 0 < s.c < 0.8:
        problems.append(("c", "must lie in (0, 0.8)"))
    if not 0 < s.dense_c < 0.8:
        problems.append(("dense_c", "must lie in (0, 0.8)"))
    if not s.c_m > 0:
        problems.append(("c_m", "must be positive"))

    n = s.n
    if s.density is not None and s.big_n is not None and not problems:
        n = math.ceil(s.density * s.big_n)
    elif n is None and s.big_n is not None:
        n = s.big_n
    proto = s.protocol
    if proto in DETERMINISTIC + DENSE:
        if s.big_n is None:
            problems.append(("big_n", f"{proto} needs the ID space size"))
        elif n is not None and n > s.big_n:
            problems.append(("n", f"{n} active devices exceed big_n = {s.big_n}"))
        elif n == 0:
            problems.append(("n", f"{proto} needs at least one active device"))
    elif proto in PROTOCOLS:
        if n is None:
            problems.append(("n", f"{proto} needs the population size"))
    if proto in ("test_network_size", "circuit"):
        guess = s.n_tilde if s.n_tilde is not None else n
        if guess is not None and not guess >= (100 if proto == "test_network_size" else 2):
            problems.append(("n_tilde", f"{guess} is below the protocol floor"))

    sched = None
    if proto in ("exponential_search", "estimate_network_size"):
        if isinstance(s.d1, bool) or not isinstance(s.d1, (int, np.integer)):
            problems.append(("d1", f"must be an integer, got {s.d1!r}"))
        elif s.d1 < MIN_D1:
            problems.append(("d1", f"{s.d1} is below {MIN_D1}, the smallest with 2^(d1/2) >= 100"))
        else:
            try:
                sched = parse_schedule(s.schedule, int(s.d1))
            except ConfigError as exc:
                problems.append(("schedule" if exc.field is None else exc.field, str(exc)))
    circuit = bits = None
    if proto == "circuit":
        if s.circuit is None:
            problems.append(("circuit", "needs a circuit file"))
        else:
            try:
                circuit = parse_circuit(Path(s.circuit).read_text())
            except OSError as exc:
                problems.append(("circuit", f"cannot read {s.circuit}: {exc.strerror}"))
            except InvalidCircuit as exc:
                problems.append(("circuit", str(exc)))
        if s.inputs is not None:
            if any(ch not in "01" for ch in s.inputs):
                problems.append(("inputs", "must be a string of 0 and 1"))
            elif circuit is not None and len(s.inputs) != circuit.n_inputs:
                problems.append(("inputs", f"circuit has {circuit.n_inputs} inputs, got {len(s.inputs)}"))
            else:
                bits = tuple(int(ch) for ch in s.inputs)

    if problems:
        raise ConfigError("; ".join(f"{f}: {m}" for f, m in problems))
    assert model is not None
    if proto in DETERMINISTIC and not model.sender_feedback:
        raise ModelUnsupported(f"{proto} needs sender collision detection, not {model.value}")
    if proto == "exponential_search" and not model.listener_cd:
        raise ModelUnsupported(f"exponential_search needs listener collision detection, not {model.value}")
    if proto == "circuit" and model not in (ModelKind.SENDER_CD, ModelKind.NO_CD):
        raise ModelUnsupported(f"circuit simulation runs in sender-cd or no-cd, not {model.value}")
    return _Plan(s, model, int(n), sched, circuit, bits)


# -- trials ------------------------------------------------------------------

def _active(plan: _Plan, seed: int) -> list:
    s = plan.scenario
    if plan.n == s.big_n:
        return list(range(s.big_n))
    pick = derive_rng(seed, 11).choice(s.big_n, size=plan.n, replace=False)
    return sorted(int(x) for x in pick)


def _record(plan: _Plan, t: int, seed: int, outcome: dict, correct: bool, failed: bool,
            slots: int, max_e: int, avg_e: float, exact: bool, msg: int) -> dict:
    s = plan.scenario
    if s.slot_limit is not None and slots > s.slot_limit:
        correct, failed = False, True
    out = {k: outcome.get(k) for k in OUTCOME_KEYS}
    values = (s.echo(), t, seed, out, bool(correct), bool(failed), int(slots), int(max_e),
              float(avg_e), bool(exact), int(msg))
    return dict(zip(RECORD_KEYS, values))


def _tns_expected(m: int, n_tilde: float):
    """True if a leader is required, False if forbidden, None if either is fine."""
    if m == 0:
        return False
    ratio = n_tilde / m
    if 1 / TNS_ELECT_RATIO <= ratio <= TNS_ELECT_RATIO:
        return True
    if ratio >= TNS_SILENT_RATIO or ratio <= 1 / TNS_SILENT_RATIO:
        return False
    return None


def run_trial(plan: _Plan, t: int) -> dict:
    """Run trial ``t`` of a validated plan and judge it."""
    s = plan.scenario
    seed = s.seed + t
    model, n, proto = plan.model, plan.n, s.protocol

    if proto in DETERMINISTIC + DENSE:
        active = _active(plan, seed)
        try:
            if proto == "det_leader_election":
                res = det_leader_election(s.big_n, active, preprocess=s.preprocess, model=model)
            elif proto == "det_census":
                res = det_census(s.big_n, active, model=model)
            elif proto == "dense_leader_election":
                res = dense_leader_election(s.big_n, active, config=DenseConfig(c=s.dense_c), model=model)
            else:
                res = dense_census(s.big_n, active, config=DenseConfig(c=s.dense_c), model=model)
        except (LeaderGroupTooSmall, SlotLimitExceeded):
            return _record(plan, t, seed, {}, False, True, 0, 0, 0.0, True, 0)
        tr = res.transcript
        if proto.endswith("census"):
            census = res.census
            leader = res.announcer_id if proto == "det_census" else res.leader_id
            ok = census is not None and sorted(census) == active
            outcome = {"leader_id": leader, "census_size": None if census is None else len(census)}
            failed = census is None
        else:
            ok = res.leader_count == 1 and res.leader_id in set(active)
            outcome = {"leader_id": res.leader_id}
            failed = res.leader_id is None
        return _record(plan, t, seed, outcome, ok, failed, tr.slot_count, tr.max_energy,
                       tr.avg_energy, True, tr.max_message_bytes)

    if proto == "trivial_algorithm":
        d = 2 ** s.d1
        res = trivial_algorithm(n, d, model, seed=seed)
        if res.exceeds:
            ok = n > d
        else:
            ok = res.estimate is not None and n / 2 <= res.estimate <= 2 * n
        ok = ok and res.agreed
        e = res.energy
        return _record(plan, t, seed, {"estimate": res.estimate}, ok, not res.agreed, res.slots,
                       e.max_energy, e.mean_energy, e.exact, 0)

    if proto == "exponential_search":
        res = exponential_search(n, plan.schedule, model, seed=seed)
        i_hat = plan.schedule.i_hat(math.log2(n)) if n > 1 else 1
        ok = abs(res.i_tilde - i_hat) <= 1
        # every device takes part in every test slot
        return _record(plan, t, seed, {"estimate": res.i_tilde}, ok, False, res.slots,
                       res.tests, float(res.tests), True, 0)

    if proto == "test_network_size":
        guess = float(s.n_tilde if s.n_tilde is not None else n)
        res = test_network_size(n, guess, model, seed=seed, c_id=s.c_id, beta=s.beta, c=s.c)
        want = _tns_expected(n, guess)
        ok = want is None or want == (res.leader is not None)
        energy = np.zeros(n, dtype=np.int64)
        if res.devices.size:
            energy[res.devices] = res.energy
        max_e = int(max(energy.max(initial=0), res.hidden))
        avg_e = float(energy.mean()) if n else 0.0
        return _record(plan, t, seed, {"leader_id": res.leader_id, "census_size": res.collected},
                       ok, False, res.slots, max_e, avg_e, res.hidden == 0, res.max_message_bytes)

    if proto == "estimate_network_size":
        cfg = CountConfig(c_id=s.c_id, beta=s.beta, c=s.c, slot_limit=s.slot_limit)
        res = estimate_network_size(n, plan.schedule, model, seed=seed, config=cfg)
        e = res.energy
        return _record(plan, t, seed, {"estimate": res.estimate}, res.success(n),
                       res.estimate is None, res.slots, e.max_energy, e.mean_energy, e.exact,
                       res.max_message_bytes)

    # circuit
    guess = float(s.n_tilde if s.n_tilde is not None else n)
    c = plan.circuit
    rng = derive_rng(seed, 12)
    bits = plan.bits if plan.bits is not None else tuple(int(b) for b in rng.integers(0, 2, c.n_inputs))
    senders = [[int(rng.integers(n))] if b and n else [] for b in bits]
    run = simulate_circuit(c, n, guess, model, input_senders=senders, seed=seed, c_m=s.c_m)
    return _record(plan, t, seed, {"leader_id": run.leader, "output": run.output},
                   run.correct, run.leader is None, run.slots, run.max_energy, run.mean_energy,
                   True, 1)


def _worker(args) -> dict:
    plan, t = args
    return run_trial(plan, t)


def thread_cap() -> int:
    """Trial parallelism from RADIONET_THREADS (default 1)."""
    raw = os.environ.get("RADIONET_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"not an integer: {raw!r}", "RADIONET_THREADS") from None
    if value < 1:
        raise ConfigError(f"must be at least 1, got {value}", "RADIONET_THREADS")
    return value


def run_scenario(s: Scenario, *, workers: int | None = None) -> Iterator[dict]:
    """Validate, then yield one record per trial in trial order.

    ``workers`` defaults to RADIONET_THREADS.  Trials run in worker
    processes when it exceeds 1; records still come out in trial order.
    """
    plan = validate(s)
    workers = thread_cap() if workers is None else workers
    workers = min(workers, s.trials)
    if workers <= 1:
        for t in range(s.trials):
            yield run_trial(plan, t)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_worker, [(plan, t) for t in range(s.trials)])


# -- output ------------------------------------------------------------------

def dumps_record(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, allow_nan=False)


def write_jsonl(records: Iterable[dict], path) -> int:
    """Write records as UTF-8 JSON Lines; returns how many were written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")
            count += 1
    return count


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(records: Iterable[dict], path) -> None:
    """Flat CSV with columns in ``CSV_COLUMNS`` order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_COLUMNS)
        for rec in records:
            flat = {**rec, **rec["outcome"], "protocol": rec["scenario"]["protocol"],
                    "model": rec["scenario"]["model"]}
            out.writerow(["" if flat.get(k) is None else flat[k] for k in CSV_COLUMNS])


# -- aggregation -------------------------------------------------------------

def nearest_rank(values, pct: int):
    """Smallest value with at least pct percent of the data at or below it.

    Rank ceil(pct * n / 100), 1-based, over the sorted values; so the p50
    of {1, 2, 3, 4} is 2.
    """
    data = sorted(values)
    if not data:
        raise EmptyInput("no values")
    rank = max(1, -(-pct * len(data) // 100))
    return data[rank - 1]


def _quantiles(values) -> dict:
    return {"p50": nearest_rank(values, 50), "p95": nearest_rank(values, 95), "max": max(values)}


def aggregate(records: Iterable[dict]) -> dict:
    """Success rate plus nearest-rank quantiles of energy and slots.

    Energy quantiles are over each record's ``max_energy``.  The result
    does not depend on record order.
    """
    recs = list(records)
    if not recs:
        raise EmptyInput("aggregate needs at least one record")
    n = len(recs)
    return {
        "records": n,
        "success_rate": sum(bool(r["correct"]) for r in recs) / n,
        "failure_rate": sum(bool(r["failed"]) for r in recs) / n,
        "energy": _quantiles([r["max_energy"] for r in recs]),
        "avg_energy": _quantiles([r["avg_energy"] for r in recs]),
        "slots": _quantiles([r["slot_count"] for r in recs]),
    }


# -- presets -----------------------------------------------------------------

def _tradeoff(schedule: str, trials: int = 20) -> list:
    return [Scenario("estimate_network_size", model, n=2 ** 20, trials=trials, schedule=schedule)
            for model in ("sender-cd", "strong-cd")]


PRESETS = {
    "tradeoff-geometric": lambda: _tradeoff("geometric:2"),
    "tradeoff-polynomial": lambda: _tradeoff("poly:1"),
    "tradeoff-exponential": lambda: _tradeoff("exp:2"),
    "tradeoff-double-exp": lambda: _tradeoff("double-exp:0.6"),
    "energy-separation": lambda: [
        Scenario("estimate_network_size", model, n=2 ** e, trials=10, schedule="double-exp:0.6")
        for e in (20, 40, 60) for model in ("strong-cd", "sender-cd")],
}


def preset(name: str) -> list:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}", "preset")
    return PRESETS[name]()


def scenario_from_dict(data: dict) -> Scenario:
    known = {f.name for f in fields(Scenario)}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"unknown keys {', '.join(extra)}", "scenario")
    if "protocol" not in data:
        raise ConfigError("missing", "protocol")
    return Scenario(**data)


def scenario_dict(s: Scenario) -> dict:
    return asdict(s)
