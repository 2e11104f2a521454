"""Collaborative evaluation of a constant fan-in circuit over the channel.

Every device takes each task with probability 1/n_tilde.  Gate(r, i)
competes in contention slot i of gate r; Saboteur(r, i, j, k) jams slot j
of gate r once it hears a message in slot i.  A gate's announcement slot
carries a message only when exactly one device speaks, and that device
computed the gate from announcements it heard, so a heard value is always
correct.  Missing tasks or saboteurs can only lose the run, never corrupt it.

Without collision detection (NoCD) each contention slot becomes three
slots in which a Gate_1 holder and a Gate_2 holder relay a message back
and forth; saboteurs jam all three.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ModelKind, derive_rng
from .errors import InvalidCircuit, ModelUnsupported, PreconditionViolated

DEFAULT_FAN_IN = 2
C_M = 3  # m = ceil(C_M * log2(n_tilde)) contention slots per gate

_FUNCS = ("AND", "OR", "NOT", "XOR", "TABLE")


# -- circuits ----------------------------------------------------------------

@dataclass(frozen=True)
class Wire:
    """A circuit input (kind "x") or an earlier gate (kind "g"), 0-based."""

    kind: str
    index: int

    def __str__(self) -> str:
        return f"{self.kind}{self.index}"


@dataclass(frozen=True)
class Gate:
    fn: str
    table: tuple      # output bit for each input combination, first source most significant
    srcs: tuple       # Wire, ...

    def apply(self, bits) -> int:
        idx = 0
        for b in bits:
            idx = (idx << 1) | (1 if b else 0)
        return self.table[idx]


def _table(fn: str, k: int) -> tuple:
    rows = []
    for idx in range(2 ** k):
        bits = [(idx >> (k - 1 - t)) & 1 for t in range(k)]
        if fn == "AND":
            rows.append(int(all(bits)))
        elif fn == "OR":
            rows.append(int(any(bits)))
        elif fn == "XOR":
            rows.append(sum(bits) % 2)
        else:  # NOT
            rows.append(1 - bits[0])
    return tuple(rows)


def make_gate(fn: str, srcs, table=None) -> Gate:
    fn = fn.upper()
    srcs = tuple(srcs)
    if fn not in _FUNCS:
        raise InvalidCircuit(f"unknown gate function {fn!r}")
    if fn == "TABLE":
        t = tuple(int(b) for b in table)
        if any(b not in (0, 1) for b in t) or len(t) != 2 ** len(srcs):
            raise InvalidCircuit(f"TABLE needs 2^{len(srcs)} bits, got {len(t)}")
        return Gate(fn, t, srcs)
    if fn == "NOT" and len(srcs) != 1:
        raise InvalidCircuit("NOT takes exactly one source")
    if fn != "NOT" and len(srcs) < 2:
        raise InvalidCircuit(f"{fn} takes at least two sources")
    return Gate(fn, _table(fn, len(srcs)), srcs)


@dataclass(frozen=True)
class Circuit:
    n_inputs: int
    gates: tuple
    output: int           # 0-based gate index
    fan_in: int = DEFAULT_FAN_IN

    def __post_init__(self):
        validate(self)

    @property
    def size(self) -> int:
        return len(self.gates)


def validate(c: Circuit) -> None:
    if c.n_inputs < 0:
        raise InvalidCircuit("negative input count")
    if not c.gates:
        raise InvalidCircuit("circuit has no gates")
    for r, g in enumerate(c.gates):
        if not 1 <= len(g.srcs) <= c.fan_in:
            raise InvalidCircuit(f"gate {r + 1} has fan-in {len(g.srcs)}, limit {c.fan_in}")
        if len(g.table) != 2 ** len(g.srcs):
            raise InvalidCircuit(f"gate {r + 1} table does not match its fan-in")
        for w in g.srcs:
            if w.kind == "x" and not 0 <= w.index < c.n_inputs:
                raise InvalidCircuit(f"gate {r + 1} reads missing input x{w.index}")
            if w.kind == "g" and not 0 <= w.index < r:
                raise InvalidCircuit(f"gate {r + 1} reads gate {w.index + 1}, which is not earlier")
            if w.kind not in ("x", "g"):
                raise InvalidCircuit(f"gate {r + 1} has a bad source {w}")
    if not 0 <= c.output < len(c.gates):
        raise InvalidCircuit(f"output gate {c.output + 1} does not exist")


def eval_circuit(c: Circuit, inputs) -> int:
    """Evaluate gate by gate in topological order."""
    bits = [int(b) for b in inputs]
    if len(bits) != c.n_inputs:
        raise InvalidCircuit(f"expected {c.n_inputs} inputs, got {len(bits)}")
    vals = []
    for g in c.gates:
        vals.append(g.apply([bits[w.index] if w.kind == "x" else vals[w.index] for w in g.srcs]))
    return vals[c.output]


# -- text format -------------------------------------------------------------

def _wire(tok: str, lineno: int) -> Wire:
    if len(tok) >= 2 and tok[0] in "xg" and tok[1:].isdigit():
        idx = int(tok[1:])
        return Wire("x", idx) if tok[0] == "x" else Wire("g", idx - 1)
    raise InvalidCircuit(f"line {lineno}: bad source {tok!r} (use x<i> or g<j>)")


def parse_circuit(text: str, fan_in: int = DEFAULT_FAN_IN) -> Circuit:
    """Parse the line format.

    ``inputs L`` first; then ``gate <j> <AND|OR|NOT|XOR|TABLE bits> <src...>``
    with gates numbered 1, 2, ... in order and sources ``x<i>`` (0-based
    input) or ``g<j>`` (earlier gate); finally ``output <j>``.  Blank lines
    and ``#`` comments are ignored.
    """
    n_inputs = None
    gates = []
    output = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        head = tok[0].lower()
        if output is not None:
            raise InvalidCircuit(f"line {lineno}: nothing may follow the output line")
        if head == "inputs":
            if n_inputs is not None or len(tok) != 2 or not tok[1].isdigit():
                raise InvalidCircuit(f"line {lineno}: expected a single 'inputs <count>' line first")
            n_inputs = int(tok[1])
        elif head == "gate":
            if n_inputs is None:
                raise InvalidCircuit(f"line {lineno}: 'inputs' must come first")
            if len(tok) < 4 or not tok[1].isdigit() or int(tok[1]) != len(gates) + 1:
                raise InvalidCircuit(f"line {lineno}: expected 'gate {len(gates) + 1} <fn> <src...>'")
            fn = tok[2].upper()
            rest = tok[3:]
            table = None
            if fn == "TABLE":
                if len(rest) < 2 or set(rest[0]) - {"0", "1"}:
                    raise InvalidCircuit(f"line {lineno}: TABLE needs a bit string and sources")
                table, rest = rest[0], rest[1:]
            try:
                gates.append(make_gate(fn, [_wire(t, lineno) for t in rest], table))
            except InvalidCircuit as e:
                raise InvalidCircuit(f"line {lineno}: {e}") from None
        elif head == "output":
            if len(tok) != 2 or not tok[1].isdigit():
                raise InvalidCircuit(f"line {lineno}: expected 'output <gate>'")
            output = int(tok[1]) - 1
        else:
            raise InvalidCircuit(f"line {lineno}: unknown directive {tok[0]!r}")
    if n_inputs is None:
        raise InvalidCircuit("missing 'inputs' line")
    if output is None:
        raise InvalidCircuit("missing 'output' line")
    try:
        return Circuit(n_inputs, tuple(gates), output, fan_in)
    except InvalidCircuit as e:
        raise InvalidCircuit(f"circuit: {e}") from None


def format_circuit(c: Circuit) -> str:
    lines = [f"inputs {c.n_inputs}"]
    for r, g in enumerate(c.gates, start=1):
        fn = g.fn if g.fn != "TABLE" else "TABLE " + "".join(map(str, g.table))
        srcs = " ".join(f"x{w.index}" if w.kind == "x" else f"g{w.index + 1}" for w in g.srcs)
        lines.append(f"gate {r} {fn} {srcs}")
    lines.append(f"output {c.output + 1}")
    return "\n".join(lines) + "\n"


# -- prebuilt circuits -------------------------------------------------------

def identity_circuit() -> Circuit:
    """One input, one gate: x0 AND x0."""
    return Circuit(1, (make_gate("AND", [Wire("x", 0), Wire("x", 0)]),), 0)


def threshold_circuit(n_inputs: int, t: int) -> Circuit:
    """Output 1 iff at least ``t`` of the inputs are 1 (1 <= t <= n_inputs).

    Uses the O(n_inputs * t) recurrence s[i][k] = s[i-1][k] OR (s[i-1][k-1]
    AND x_i), where s[i][k] means "at least k of the first i inputs".
    """
    if not 1 <= t <= n_inputs:
        raise InvalidCircuit("threshold must lie in [1, n_inputs]")
    gates = []
    s = {}  # (i, k) -> Wire, for i inputs seen

    def add(g):
        gates.append(g)
        return Wire("g", len(gates) - 1)

    s[(1, 1)] = add(make_gate("AND", [Wire("x", 0), Wire("x", 0)]))
    for i in range(2, n_inputs + 1):
        x = Wire("x", i - 1)
        for k in range(1, min(i, t) + 1):
            if k == 1:
                s[(i, 1)] = add(make_gate("OR", [s[(i - 1, 1)], x]))
            elif k == i:
                s[(i, k)] = add(make_gate("AND", [s[(i - 1, k - 1)], x]))
            else:
                both = add(make_gate("AND", [s[(i - 1, k - 1)], x]))
                s[(i, k)] = add(make_gate("OR", [s[(i - 1, k)], both]))
    return Circuit(n_inputs, tuple(gates), len(gates) - 1)


def random_circuit(n_inputs: int, n_gates: int, rng: np.random.Generator,
                   fan_in: int = DEFAULT_FAN_IN) -> Circuit:
    """Random TABLE gates; the last gate is the output."""
    gates = []
    for r in range(n_gates):
        pool = [Wire("x", i) for i in range(n_inputs)] + [Wire("g", j) for j in range(r)]
        k = int(rng.integers(1, fan_in + 1))
        srcs = [pool[int(rng.integers(0, len(pool)))] for _ in range(k)]
        table = rng.integers(0, 2, size=2 ** k).tolist()
        gates.append(make_gate("TABLE", srcs, table))
    return Circuit(n_inputs, tuple(gates), n_gates - 1, fan_in)


# -- simulation --------------------------------------------------------------

@dataclass
class CircuitRun:
    leader: int | None
    output: int | None
    inputs: tuple          # realized input bits
    expected: int          # eval_circuit on the realized inputs
    slots: int
    max_energy: int
    mean_energy: float
    holdings: int          # (device, task) pairs drawn
    dropped: int           # holdings removed for schedule conflicts
    announced: int         # gates whose announcement slot carried a message

    @property
    def correct(self) -> bool:
        return self.leader is None or self.output == self.expected


def contention_slots(n_tilde: float, c_m: float = C_M) -> int:
    return max(1, math.ceil(c_m * math.log2(n_tilde)))


def circuit_slots(c: Circuit, m: int, model: ModelKind) -> int:
    if model is ModelKind.NO_CD:
        return c.n_inputs + (3 * m + 1) * c.size + 1
    return c.n_inputs + (m + 1) * c.size


def _holders(rng: np.random.Generator, n: int, p: float, tasks: int):
    """Holders of ``tasks`` tasks, each device taking each task w.p. p.

    Returns (task, device) arrays; a task never lists a device twice.
    """
    counts = rng.binomial(n, p, size=tasks)
    task = np.repeat(np.arange(tasks, dtype=np.int64), counts)
    dev = rng.integers(0, n, size=task.size, dtype=np.int64)
    while task.size:
        key = task * n + dev
        _, first = np.unique(key, return_index=True)
        if first.size == key.size:
            break
        again = np.ones(key.size, dtype=bool)
        again[first] = False
        dev[again] = rng.integers(0, n, size=int(again.sum()), dtype=np.int64)
    return task, dev


# footprint kinds: a device may combine several tasks in one slot only if
# they all listen or all jam
_LISTEN, _SEND, _JAM, _INPUT = 0, 1, 2, 3
_DENSE_KEYS = 2 ** 25   # count clashes with bincount up to this many (device, slot) keys


class _Layout:
    """Slot numbers of one run."""

    def __init__(self, c: Circuit, m: int, nocd: bool):
        self.c, self.m, self.nocd = c, m, nocd
        self.width = 3 * m + 1 if nocd else m + 1

    def contention(self, r, i, part=0):
        base = self.c.n_inputs + r * self.width
        return base + (3 * i + part if self.nocd else i)

    def announce(self, r):
        return self.c.n_inputs + (r + 1) * self.width - 1

    def echo(self):
        return self.c.n_inputs + self.c.size * self.width

    def source(self, w: Wire):
        return w.index if w.kind == "x" else self.announce(w.index)


def simulate_circuit(c: Circuit, n: int, n_tilde: float, model: ModelKind = ModelKind.SENDER_CD, *,
                     input_senders=None, seed: int = 0, m: int | None = None, c_m: float = C_M,
                     guarantee: bool = False) -> CircuitRun:
    """Simulate ``c`` with ``n`` devices that agree on ``n_tilde``.

    ``input_senders[i]`` lists the devices transmitting in input slot i; the
    realized input bit is 1 iff exactly one does.  Missing entries mean no
    transmitter.  Returns the leader (if any) and its output bit.
    """
    if model not in (ModelKind.SENDER_CD, ModelKind.NO_CD):
        raise ModelUnsupported(f"circuit simulation runs in sender-cd or no-cd, not {model.value}")
    if n_tilde < 2:
        raise PreconditionViolated("n_tilde must be at least 2")
    if model is ModelKind.NO_CD and n < 2:
        raise PreconditionViolated("NoCD circuit simulation needs at least two devices")
    if guarantee and c.size > math.log2(n_tilde) ** 4:
        raise PreconditionViolated(f"{c.size} gates exceed (log2 n_tilde)^4")
    m = m if m is not None else contention_slots(n_tilde, c_m)
    nocd = model is ModelKind.NO_CD
    lay = _Layout(c, m, nocd)
    rng = derive_rng(seed, 7)
    senders = [list(s) for s in (input_senders or [])] + [[] for _ in range(c.n_inputs)]
    senders = senders[:c.n_inputs]
    for s in senders:
        if len(set(s)) != len(s) or any(not 0 <= d < n for d in s):
            raise PreconditionViolated("input senders must be distinct devices in [0, n)")
    bits = tuple(int(len(s) == 1) for s in senders)
    expected = eval_circuit(c, bits)
    slots = circuit_slots(c, m, model)
    if n == 0:
        return CircuitRun(None, None, bits, expected, slots, 0, 0.0, 0, 0, 0)

    # task numbering per gate: gate tasks (2m in NoCD: Gate_1 then Gate_2),
    # then saboteurs (i, j, k) for i < j
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    n_gate = 2 * m if nocd else m
    per_gate = n_gate + len(pairs) * m
    task, dev = _holders(rng, n, 1.0 / n_tilde, per_gate * c.size)
    r_of = task // per_gate
    local = task % per_gate
    is_gate = local < n_gate
    sab_idx = np.where(is_gate, 0, (local - n_gate) // m)
    pair_i = np.array([p[0] for p in pairs] or [0], dtype=np.int64)[sab_idx]
    pair_j = np.array([p[1] for p in pairs] or [0], dtype=np.int64)[sab_idx]
    role = np.where(is_gate, np.where(local < m, 1, 2), 0)     # 1 Gate(_1), 2 Gate_2, 0 saboteur
    slot_i = np.where(is_gate, local % m, pair_i)              # contention slot a task competes in or watches
    holdings = int(task.size)

    # footprints: every slot a holding may use, with the kind of use
    fp_h, fp_s, fp_k = [], [], []

    def mark(sel, slot_arr, kind):
        idx = np.flatnonzero(sel)
        fp_h.append(idx)
        fp_s.append(np.asarray(slot_arr, dtype=np.int64)[idx] if np.ndim(slot_arr) else np.full(idx.size, slot_arr))
        fp_k.append(np.full(idx.size, kind))

    r_arr = r_of
    ann = np.array([lay.announce(r) for r in range(c.size)], dtype=np.int64)
    for r, g in enumerate(c.gates):
        in_r = r_arr == r
        for w in g.srcs:
            mark(in_r & (role == 1), lay.source(w), _LISTEN)
    if nocd:
        base = c.n_inputs + r_arr * lay.width + 3 * slot_i
        g1, g2, sab = role == 1, role == 2, role == 0
        mark(g1, base, _SEND)
        mark(g1, base + 1, _LISTEN)
        mark(g1, base + 2, _SEND)
        mark(g1, ann[r_arr], _SEND)
        mark(g2, base, _LISTEN)
        mark(g2, base + 1, _SEND)
        mark(g2, base + 2, _LISTEN)
        out = r_arr == c.output
        mark(g1 & out, lay.echo(), _LISTEN)
        mark(g2 & out, ann[r_arr], _LISTEN)
        mark(g2 & out, lay.echo(), _SEND)
        mark(sab, base + 1, _LISTEN)
        jbase = c.n_inputs + r_arr * lay.width + 3 * pair_j
        for part in range(3):
            mark(sab, jbase + part, _JAM)
    else:
        base = c.n_inputs + r_arr * lay.width + slot_i
        g1, sab = role == 1, role == 0
        mark(g1, base, _SEND)
        mark(g1, ann[r_arr], _SEND)
        mark(sab, base, _LISTEN)
        mark(sab, c.n_inputs + r_arr * lay.width + pair_j, _JAM)
    h = np.concatenate(fp_h)
    s = np.concatenate(fp_s)
    k = np.concatenate(fp_k)
    # input transmissions are fixed; tasks of the same device in that slot clash with them
    in_dev = np.array([d for sl in senders for d in sl], dtype=np.int64)
    in_slot = np.array([i for i, sl in enumerate(senders) for _ in sl], dtype=np.int64)
    d_all = np.concatenate([dev[h], in_dev])
    s_all = np.concatenate([s, in_slot])
    k_all = np.concatenate([k, np.full(in_dev.size, _INPUT)])
    h_all = np.concatenate([h, np.full(in_dev.size, -1)])
    key = d_all * (slots + 1) + s_all
    # a (device, slot) clashes if uses differ, or if several holdings send their own message
    space = n * (slots + 1)
    if space <= _DENSE_KEYS:
        # per-kind counts packed in base 1024 digits (exact in float64)
        packed = np.bincount(key, weights=1024.0 ** k_all, minlength=space)[key].astype(np.int64)
        digits = [(packed >> (10 * kind)) & 1023 for kind in range(4)]
        kinds = sum((d > 0).astype(np.int8) for d in digits)
        clash = (kinds > 1) | (digits[_SEND] > 1)
    else:
        order = np.argsort(key, kind="stable")
        key_o, k_o = key[order], k_all[order]
        start = np.r_[True, key_o[1:] != key_o[:-1]]
        grp = np.cumsum(start) - 1
        heads = np.flatnonzero(start)
        kmin = np.minimum.reduceat(k_o, heads)
        kmax = np.maximum.reduceat(k_o, heads)
        sends = np.bincount(grp, weights=(k_o == _SEND))
        clash = np.empty(key.size, dtype=bool)
        clash[order] = ((kmin != kmax) | (sends > 1))[grp]
    bad = h_all[clash & (h_all >= 0)]
    alive = np.ones(holdings, dtype=bool)
    alive[bad] = False
    dropped = int(holdings - alive.sum())

    energy = np.zeros(n, dtype=np.int64)
    np.add.at(energy, in_dev, 1)
    ann_val: list = [None] * c.size
    leader = None
    announced = 0
    for r, g in enumerate(c.gates):
        sel = alive & (r_arr == r)
        gate_h = np.flatnonzero(sel & (role == 1))
        g2_h = np.flatnonzero(sel & (role == 2))
        sab_h = np.flatnonzero(sel & (role == 0))
        # Gate holders listen to the sources in order and stop at a silent one
        ready = True
        vals = []
        heard = 0
        for w in g.srcs:
            heard += 1
            v = bits[w.index] if w.kind == "x" else ann_val[w.index]
            if v is None:
                ready = False
                break
            vals.append(v)
        np.add.at(energy, dev[gate_h], heard)
        value = g.apply(vals) if ready else None
        gi = slot_i[gate_h]
        g2i = slot_i[g2_h]
        si, sj = slot_i[sab_h], pair_j[sab_h]
        np.add.at(energy, dev[sab_h], 1)           # every saboteur listens once
        jam_dev = [set() for _ in range(m)]       # devices jamming each contention slot
        triggered = np.zeros(sab_h.size, dtype=bool)
        claim = []                                 # holdings that won their slot
        partner = []
        for i in range(m):
            g_here = gate_h[gi == i] if ready else gate_h[:0]
            jam = jam_dev[i]
            if nocd:
                g2_here = g2_h[g2i == i]
                np.add.at(energy, dev[g_here], 2)      # send in part a, listen in part b
                np.add.at(energy, dev[g2_here], 1)     # listen in part a
                echo = g_here.size == 1 and not jam   # Gate_2 heard a lone gate message
                if echo:
                    np.add.at(energy, dev[g2_here], 2)  # send in part b, listen in part c
                lone_b = (g2_here.size if echo else 0) + len(jam) == 1
                ok = echo and g2_here.size == 1
                if ok:
                    energy[dev[g_here]] += 1             # send in part c
                    claim.append(int(g_here[0]))
                    partner.append(int(g2_here[0]))
                heard_msg = lone_b
            else:
                np.add.at(energy, dev[g_here], 1)
                lone = g_here.size + len(jam) == 1
                if lone and g_here.size == 1:
                    claim.append(int(g_here[0]))
                heard_msg = lone
            if heard_msg:
                fire = (si == i) & ~triggered
                triggered |= fire
                for hh, j in zip(sab_h[fire].tolist(), sj[fire].tolist()):
                    d = int(dev[hh])
                    if d not in jam_dev[j]:
                        jam_dev[j].add(d)
                        energy[d] += 3 if nocd else 1
        for hh in claim:
            energy[dev[hh]] += 1
        if len(claim) == 1:
            ann_val[r] = value
            announced += 1
        if r == c.output:
            if nocd:
                # partners listen to the announcement; one that hears it echoes
                for hh in partner + claim:
                    energy[dev[hh]] += 1
                if len(claim) == 1:
                    energy[dev[partner[0]]] += 1
                    leader = int(dev[claim[0]])
            elif len(claim) == 1:
                leader = int(dev[claim[0]])
    output = ann_val[c.output] if leader is not None else None
    return CircuitRun(leader, output, bits, expected, slots, int(energy.max()),
                      float(energy.mean()), holdings, dropped, announced)
