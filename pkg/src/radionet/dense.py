"""Leader Election and Census for dense instances (n >= c*N).

Energy grows like the inverse Ackermann function of N.  The recursion
``DenseAlgo_i`` first merges groups part by part with SimpleCensus (the
initialization step) and then, for i > 0, splits every surviving group into
j equal subgroups that take turns running ``DenseAlgo_{i-1}``.  A device in
subgroup r+1 inherits its counterpart's role by listening to one output slot
of call r.

Groups are always ordered by device ID, and every merge joins a consecutive
range of group IDs, so group membership lists are sorted ID sets.  What a
group knows travels as ``Knowledge``: one record frame per open recursion
level, each mapping a group ID at that level to its member set.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from functools import lru_cache

from .channel import DEFAULT_MESSAGE_CAP, Channel, Message, ModelKind, Transcript
from .codec import IdSet, pack_ints, unpack_ints
from .errors import LeaderGroupTooSmall, NoActiveDevices, PreconditionViolated
from .groups import Group, ceil_log2, decode_info, encode_info, simple_census, simple_census_slots

DEFAULT_CAP = 2 ** 63 - 1


# ---------------------------------------------------------------------------
# a_i(j), b_i(j) with saturation


@dataclass(frozen=True)
class CappedMagnitude:
    """A non-negative integer, or a marker that it exceeds ``cap``.

    Comparisons against any ``M <= cap`` are exact.  A saturated value also
    compares as at least any larger ``M``: the true values here dwarf
    anything a simulation can address.
    """

    value: int
    saturated: bool = False
    cap: int = DEFAULT_CAP

    @classmethod
    def of(cls, raw: int, cap: int = DEFAULT_CAP) -> "CappedMagnitude":
        if raw > cap:
            return cls(cap, True, cap)
        return cls(raw, False, cap)

    def at_least(self, m: int) -> bool:
        return self.saturated or self.value >= m

    def __int__(self) -> int:
        return self.value

    def __repr__(self) -> str:
        return f"CappedMagnitude(>{self.cap})" if self.saturated else f"CappedMagnitude({self.value})"


def _sat(cap: int) -> int:
    return cap + 1


def _cpow(base: int, exp: int, cap: int) -> int:
    if base >= _sat(cap):
        return _sat(cap)
    if base <= 1:
        return base
    if exp * (base.bit_length() - 1) > cap.bit_length():
        return _sat(cap)
    return min(base ** exp, _sat(cap))


def _cmul(x: int, y: int, cap: int) -> int:
    return min(x * y, _sat(cap))


@lru_cache(maxsize=None)
def _a(i: int, j: int, cap: int) -> int:
    if j >= _sat(cap):
        return _sat(cap)
    if i == 0:
        return _cpow(j, 5, cap)
    x = _cpow(j, 4, cap)
    for _ in range(j):
        if x >= _sat(cap):
            break
        x = _a(i - 1, x, cap)
    return x


@lru_cache(maxsize=None)
def _b(i: int, j: int, cap: int) -> int:
    if j >= _sat(cap):
        return _sat(cap)
    if i == 0:
        return _cpow(2, j, cap)
    prod = _cpow(2, j, cap)
    arg = _cpow(j, 4, cap)
    for _ in range(j):
        if prod >= _sat(cap):
            break
        prod = _cmul(prod, _b(i - 1, arg, cap), cap)
        arg = _a(i - 1, arg, cap)
    return prod


def _check_ij(i: int, j: int) -> None:
    if i < 0 or j < 2:
        raise ValueError(f"need i >= 0 and j >= 2, got i={i}, j={j}")


def a_func(i: int, j: int, cap: int = DEFAULT_CAP) -> CappedMagnitude:
    """a_0(j) = j^5 and a_i(j) = a_{i-1} applied j times to j^4."""
    _check_ij(i, j)
    return CappedMagnitude.of(_a(i, j, cap), cap)


def b_func(i: int, j: int, cap: int = DEFAULT_CAP) -> CappedMagnitude:
    """b_0(j) = 2^j and b_i(j) = 2^j * prod_{r=1..j} b_{i-1}(a_{i-1}^{(r-1)}(j^4))."""
    _check_ij(i, j)
    return CappedMagnitude.of(_b(i, j, cap), cap)


def min_depth(m: int, j: int, cap: int = DEFAULT_CAP) -> int:
    """Smallest i with b_i(j) >= m."""
    if m < 1:
        raise ValueError("m must be at least 1")
    i = 0
    while not b_func(i, j, cap).at_least(m):
        i += 1
    return i


def _div_ceil(n: int, d: int, cap: int) -> int:
    """ceil(n / d) where ``d`` may be saturated (then the quotient is 1)."""
    if d >= _sat(cap):
        return 1 if n > 0 else 0
    return -(-n // d)


def _fits(n_hat: int, j: int) -> bool:
    """n_hat <= 2^j without building 2^j."""
    return n_hat <= 1 or (n_hat - 1).bit_length() <= j


# ---------------------------------------------------------------------------
# knowledge carried by groups


class Knowledge:
    """Record frames, outermost recursion level first."""

    __slots__ = ("frames",)

    def __init__(self, frames=()):
        self.frames = tuple(frames)

    def __or__(self, other: "Knowledge") -> "Knowledge":
        if len(self.frames) != len(other.frames):
            raise ValueError("knowledge from different recursion depths")
        return Knowledge({**a, **b} for a, b in zip(self.frames, other.frames))

    def push(self, frame: dict) -> "Knowledge":
        return Knowledge(self.frames + (frame,))

    def pop(self) -> tuple["Knowledge", dict]:
        return Knowledge(self.frames[:-1]), self.frames[-1]


def _flatten(k: Knowledge) -> list:
    out = [len(k.frames)]
    for frame in k.frames:
        out.append(len(frame))
        for gid in sorted(frame):
            s = frame[gid]
            out.extend((gid, s.offset, s.bits))
    return out


def _unflatten(vals: list, pos: int) -> Knowledge:
    frames = []
    n_frames = vals[pos]
    pos += 1
    for _ in range(n_frames):
        count = vals[pos]
        pos += 1
        frame = {}
        for _ in range(count):
            gid, off, bits = vals[pos:pos + 3]
            pos += 3
            frame[gid] = IdSet(off, bits)
        frames.append(frame)
    return Knowledge(frames)


def encode_knowledge(gid: int, k: Knowledge) -> bytes:
    return pack_ints(gid, *_flatten(k))


def decode_knowledge(payload: bytes) -> tuple[int, Knowledge]:
    vals = unpack_ints(payload)
    return vals[0], _unflatten(vals, 1)


def _encode_output(gid: int, members: IdSet, upper: Knowledge) -> bytes:
    return pack_ints(gid, members.offset, members.bits, *_flatten(upper))


def _decode_output(payload: bytes) -> tuple[int, IdSet, Knowledge]:
    vals = unpack_ints(payload)
    return vals[0], IdSet(vals[1], vals[2]), _unflatten(vals, 3)


@dataclass
class _Out:
    """One output group as announced: ID, member IDs, knowledge of the caller's levels."""

    gid: int
    members: IdSet
    upper: Knowledge
    speaker: int


# ---------------------------------------------------------------------------
# the recursion


class _Dense:
    def __init__(self, ch: Channel, ids: list, cap: int = DEFAULT_CAP):
        self.ch = ch
        self.ids = ids
        self.index = {d: k for k, d in enumerate(ids)}
        self.cap = cap
        self._tc: dict = {}
        self.calls: list = []

    # slot budget ---------------------------------------------------------

    def slots(self, i: int, n_hat: int, j: int) -> int:
        key = (i, n_hat, j)
        if key in self._tc:
            return self._tc[key]
        if _fits(n_hat, j):
            t = simple_census_slots(n_hat) + 1
        else:
            parts = -(-n_hat // 2 ** j)
            t = parts * (simple_census_slots(2 ** j) + 1)
            if i > 0:
                for n_r, j_r in self._call_params(i, n_hat, j):
                    t += self.slots(i - 1, n_r, j_r)
                t += _div_ceil(n_hat, _b(i, j, self.cap), self.cap)
        self._tc[key] = t
        return t

    def _call_params(self, i: int, n_hat: int, j: int) -> list:
        """(N_r, j_r) of the j recursive calls of DenseAlgo_i(n_hat, j)."""
        cap = self.cap
        out = []
        n_r = -(-n_hat // 2 ** j)
        j_r = _cpow(j, 4, cap)
        for _ in range(j):
            out.append((n_r, j_r))
            n_r = _div_ceil(n_r, _b(i - 1, j_r, cap), cap)
            j_r = _a(i - 1, j_r, cap)
        return out

    # helpers ---------------------------------------------------------------

    def _id_set(self, devices) -> IdSet:
        return IdSet.from_ids(self.ids[d] for d in devices)

    def _devices(self, s: IdSet) -> list:
        index = self.index
        return [index[d] for d in s.ids()]

    def _merge(self, space: int, groups: dict, base: int, upper: dict):
        """SimpleCensus over ``groups`` (global IDs base..base+space-1).

        Returns ``(speaker, knowledge)`` for the merged group or None.
        """
        need = ceil_log2(space) + 1
        local, know = {}, {}
        for gid, mem in groups.items():
            # a group short of ranks lets its last member play the rest
            played = mem + [mem[-1]] * max(0, need - len(mem))
            local[gid - base] = Group(gid - base, played)
            know[mem[0]] = upper[gid].push({gid: self._id_set(mem)})
        res = simple_census(self.ch, space, local, know,
                            encode=encode_knowledge, decode=decode_knowledge)
        if res.leader is None:
            return None
        return res.leader, res.info

    def _announce(self, gid: int, item, listeners) -> _Out | None:
        """One announcement slot; returns what the listeners learn.

        ``item`` is ``(speaker, members, upper)`` or None for silence.
        """
        ch = self.ch
        if item is None:
            if listeners:
                ch.exchange({}, set(listeners))
            else:
                ch.advance(1)
            return None
        speaker, members, upper = item
        listen = set(listeners)
        listen.discard(speaker)
        if not listen:
            # nobody is scheduled to hear it; the speaker keeps the knowledge
            ch.advance(1)
            return _Out(gid, members, upper, speaker)
        lsig, _ = ch.exchange({speaker: _encode_output(gid, members, upper)}, listen)
        got, mem, up = _decode_output(lsig.payload)
        return _Out(got, mem, up, speaker)

    # DenseAlgo_i ----------------------------------------------------------

    def algo(self, i: int, n_hat: int, j: int, groups: dict, upper: dict, watchers: dict) -> dict:
        """Run DenseAlgo_i(n_hat, j).

        ``groups`` maps group ID to its sorted device list, ``upper`` to the
        knowledge its members carry in from the caller, and ``watchers`` to
        the devices that listen to the output slot covering that group.
        Returns the output groups by new ID.  Consumes exactly
        ``slots(i, n_hat, j)`` slots.
        """
        ch = self.ch
        start = ch.slot
        total = self.slots(i, n_hat, j)
        self.calls.append((i, n_hat, j, len(groups)))
        if not groups:
            ch.advance(total)
            return {}
        if _fits(n_hat, j):
            # one part: merge everything and skip the rest
            got = self._merge(n_hat, groups, 0, upper)
            listeners = [d for g in groups for d in watchers.get(g, ())]
            outs = {}
            if got is not None:
                speaker, k = got
                upper_k, frame = k.pop()
                members = IdSet()
                for s in frame.values():
                    members = members | s
                out = self._announce(0, (speaker, members, upper_k), listeners)
                outs[0] = out
            else:
                self._announce(0, None, listeners)
            ch.advance(start + total - ch.slot)
            return outs
        width = 2 ** j
        gids = sorted(groups)
        parts = -(-n_hat // width)
        merged = {}
        for p in range(parts):
            lo = bisect.bisect_left(gids, p * width)
            hi = bisect.bisect_left(gids, (p + 1) * width)
            got = self._merge(width, {g: groups[g] for g in gids[lo:hi]}, p * width, upper) if lo < hi else None
            if got is None:
                ch.advance(simple_census_slots(width))
            else:
                merged[p] = (got, gids[lo:hi])
        rich = j ** 5
        heard = {}
        for p in range(parts):
            if p not in merged:
                ch.advance(1)
                continue
            (speaker, k), members_of = merged[p]
            upper_k, frame = k.pop()
            members = IdSet()
            for s in frame.values():
                members = members | s
            item = (speaker, members, upper_k) if len(members) >= rich else None
            if i == 0:
                listeners = [d for g in members_of for d in watchers.get(g, ())]
            else:
                listeners = [d for g in members_of for d in groups[g]]
            out = self._announce(p, item, listeners)
            if out is not None:
                heard[p] = out
        if i == 0:
            ch.advance(start + total - ch.slot)
            return heard
        return self._recurse(i, n_hat, j, groups, watchers, heard, start, total)

    def _recurse(self, i, n_hat, j, groups, watchers, heard, start, total) -> dict:
        ch = self.ch
        # every member of a surviving group now knows the member list
        subs, records = {}, {}
        for p, out in heard.items():
            mem = self._devices(out.members)
            q = len(mem) // j
            subs[p] = [mem[r * q:(r + 1) * q] for r in range(j)]
            records[p] = out.members
        cur = {p: (subs[p][0], heard[p].upper.push({p: records[p]}), [p]) for p in heard}
        params = self._call_params(i, n_hat, j)
        outs = {}
        for r, (n_r, j_r) in enumerate(params):
            last = r == j - 1
            call_groups = {g: v[0] for g, v in cur.items()}
            call_upper = {g: v[1] for g, v in cur.items()}
            call_watch = {}
            if not last:
                for g, (_, _, cons) in cur.items():
                    call_watch[g] = [d for p in cons for d in subs[p][r + 1]]
            outs = self.algo(i - 1, n_r, j_r, call_groups, call_upper, call_watch)
            if last:
                break
            nxt = {}
            for g, out in outs.items():
                frame = out.upper.frames[-1]
                cons = sorted(frame)
                # each successor checks its counterpart made it into the group
                played = out.members
                mem = []
                for p in cons:
                    for a, b in zip(subs[p][r], subs[p][r + 1]):
                        if self.ids[a] in played:
                            mem.append(b)
                nxt[g] = (mem, out.upper, cons)
            cur = nxt
        # final output slots: leaders fold the earlier subgroups back in
        b_i = _b(i, j, self.cap)
        n_out = _div_ceil(n_hat, b_i, self.cap)
        base = ch.slot
        result = {}
        for g in sorted(outs):
            out = outs[g]
            upper_k, frame = out.upper.pop()
            full = IdSet()
            for s in frame.values():
                full = full | s
            listeners = [d for x, devs in watchers.items()
                         if (0 if b_i > self.cap else x // b_i) == g for d in devs]
            ch.advance(base + g - ch.slot)
            got = self._announce(g, (out.speaker, full, upper_k), listeners)
            result[g] = got
        ch.advance(base + n_out - ch.slot)
        ch.advance(start + total - ch.slot)
        return result


# ---------------------------------------------------------------------------
# public entry points


@dataclass
class DenseConfig:
    """Tunables of the dense protocols.

    ``part_size`` and ``j`` default to ceil(2^(8/c)) and ceil(2^(4/c)).
    ``relaxed`` lifts the j > 32 requirement so small recursions can run;
    the energy and density guarantees do not hold there.
    """

    c: float = 0.5
    part_size: int | None = None
    j: int | None = None
    collect_part: int | None = None
    relaxed: bool = False
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if not 0 < self.c < 0.8:
            raise ValueError("c must lie in (0, 0.8)")
        if self.part_size is None:
            self.part_size = math.ceil(2 ** (8 / self.c))
        if self.j is None:
            self.j = math.ceil(2 ** (4 / self.c))
        if self.collect_part is None:
            self.collect_part = math.ceil(4 / self.c)
        if self.j < 2 or (not self.relaxed and self.j <= 32):
            raise ValueError(f"j={self.j} needs relaxed mode" if self.j >= 2 else "j must be at least 2")


@dataclass
class DenseResult:
    """Outcome of a dense run; device indices refer to ``ids``."""

    leader_id: int | None
    group: list
    ids: list
    transcript: Transcript
    depth: int
    terminated: int
    census: list | None = None
    calls: list = field(default_factory=list)

    @property
    def leader_count(self) -> int:
        return 0 if self.leader_id is None else 1


def _prepare(n: int, active) -> list:
    ids = sorted(set(int(a) for a in active))
    if not ids:
        raise NoActiveDevices("no active devices")
    if ids[0] < 0 or ids[-1] >= n:
        raise PreconditionViolated(f"IDs must lie in [0, {n})")
    return ids


def _dense_le(n: int, active, cfg: DenseConfig, model: ModelKind, record: bool):
    ids = _prepare(n, active)
    cap_bytes = max(DEFAULT_MESSAGE_CAP, n // 4 + 4096)
    ch = Channel(len(ids), model, record=record, message_cap=cap_bytes)
    run = _Dense(ch, ids, cfg.cap)
    width = cfg.part_size
    need = ceil_log2(width) + 1
    parts = -(-n // width)
    # preprocessing: every device plays enough virtual ranks for SimpleCensus(width)
    groups = {}
    for q in range(parts):
        lo = bisect.bisect_left(ids, q * width)
        hi = bisect.bisect_left(ids, (q + 1) * width)
        if lo == hi:
            ch.advance(simple_census_slots(width) + 1)
            continue
        local = {ids[d] - q * width: Group(ids[d] - q * width, [d] * need) for d in range(lo, hi)}
        know = {d: IdSet(ids[d], 1) for d in range(lo, hi)}
        res = simple_census(ch, width, local, know)
        members = res.info
        item = None
        if len(members) >= cfg.j:
            item = encode_info(q, members)
        listen = set(range(lo, hi)) - {res.leader}
        if item is None:
            ch.exchange({}, listen) if listen else ch.advance(1)
            continue
        if listen:
            lsig, _ = ch.exchange({res.leader: item}, listen)
            members = decode_info(lsig.payload)[1]
        else:
            ch.advance(1)
        groups[q] = run._devices(members)
    m = max(parts, 1)
    depth = min_depth(m, cfg.j, cfg.cap)
    upper = {q: Knowledge() for q in groups}
    outs = run.algo(depth, m, cfg.j, groups, upper, dict(groups))
    return ch, run, ids, depth, outs


def dense_leader_election(n: int, active, c: float = 0.5, *, config: DenseConfig | None = None,
                          model: ModelKind = ModelKind.SENDER_CD, record: bool = False) -> DenseResult:
    """Elect a leader among ``active`` IDs in [0, n), assuming len(active) >= c*n.

    Too sparse an input may end with no group left; the result then has
    ``leader_id`` None rather than raising, since devices cannot tell.
    """
    cfg = config or DenseConfig(c=c)
    ch, run, ids, depth, outs = _dense_le(n, active, cfg, model, record)
    group = sorted(run._devices(outs[0].members)) if outs else []
    leader = ids[group[0]] if len(outs) == 1 else None
    return DenseResult(leader, [ids[d] for d in group], ids, ch.transcript(), depth,
                       len(ids) - len(group), calls=run.calls)


def dense_census(n: int, active, c: float = 0.5, *, config: DenseConfig | None = None,
                 model: ModelKind = ModelKind.SENDER_CD, record: bool = False) -> DenseResult:
    """Collect the exact active set, then tell it to every active device."""
    cfg = config or DenseConfig(c=c)
    ch, run, ids, depth, outs = _dense_le(n, active, cfg, model, record)
    if len(outs) != 1:
        raise LeaderGroupTooSmall("no single group survived the leader election")
    group = sorted(run._devices(outs[0].members))
    width = cfg.collect_part
    parts = -(-n // width)
    if len(group) < parts:
        raise LeaderGroupTooSmall(f"group of {len(group)} cannot cover {parts} parts")
    # collection: one slot per ID; the part's collector listens to all of them
    collected = [IdSet() for _ in group]
    for p in range(parts):
        coll = group[p]
        for d_id in range(p * width, min(n, (p + 1) * width)):
            k = run.index.get(d_id)
            if k is None:
                ch.exchange({}, {coll})
            elif k == coll:
                ch.advance(1)
                collected[p] = collected[p] | IdSet(d_id, 1)
            else:
                lsig, _ = ch.exchange({k: b""}, {coll})
                if isinstance(lsig, Message):
                    collected[p] = collected[p] | IdSet(d_id, 1)
    ch.advance(parts * width - n)
    # relay along the group; the last member tells everyone
    acc = IdSet()
    everyone = set(range(len(ids)))
    for r, dev in enumerate(group):
        acc = acc | collected[r]
        body = encode_info(0, acc)
        if r + 1 < len(group):
            lsig, _ = ch.exchange({dev: body}, {group[r + 1]})
        else:
            lsig, _ = ch.exchange({dev: body}, everyone - {dev})
        acc = decode_info(lsig.payload)[1] if isinstance(lsig, Message) else acc
    return DenseResult(ids[group[0]], [ids[d] for d in group], ids, ch.transcript(), depth,
                       len(ids) - len(group), census=acc.ids(), calls=run.calls)


def dense_census_slot_bound(n: int, config: DenseConfig) -> int:
    """Slots dense_census(n, ...) can use, whatever the active set.

    Preprocessing, DenseAlgo and collection have fixed lengths; the relay
    chain uses one slot per leader-group member, at most ``n``.
    """
    cfg = config
    parts = -(-n // cfg.part_size)
    m = max(parts, 1)
    pre = parts * (simple_census_slots(cfg.part_size) + 1)
    algo = _Dense(None, [], cfg.cap).slots(min_depth(m, cfg.j, cfg.cap), m, cfg.j)
    collect = -(-n // cfg.collect_part) * cfg.collect_part
    return pre + algo + collect + n


def dense_algo(i: int, n_hat: int, j: int, groups: dict, *, relaxed: bool = True,
               model: ModelKind = ModelKind.SENDER_CD, record: bool = False,
               cap: int = DEFAULT_CAP):
    """Run DenseAlgo_i(n_hat, j) on ``groups`` (group ID -> member device IDs).

    Every input group is taken as centralized with members ordered by ID.
    All input devices listen to the output slot of their own group.
    Returns ``(output groups as ID lists by new group ID, transcript)``.
    """
    if not relaxed and j <= 32:
        raise PreconditionViolated("guarantee mode needs j > 32")
    ids = sorted(d for mem in groups.values() for d in mem)
    if len(set(ids)) != len(ids):
        raise PreconditionViolated("groups overlap")
    for gid, mem in groups.items():
        if not 0 <= gid < n_hat:
            raise PreconditionViolated(f"group ID {gid} outside [0, {n_hat})")
        if 0 < len(mem) < j:
            raise PreconditionViolated(f"group {gid} has {len(mem)} members, fewer than j={j}")
        if list(mem) != sorted(mem):
            raise PreconditionViolated(f"group {gid} members are not in ID order")
    if not relaxed:
        rich = sum(1 for mem in groups.values() if len(mem) >= j)
        if rich < n_hat / math.log2(j):
            raise PreconditionViolated("j-density below 1/log j")
    ch = Channel(len(ids), model, record=record, message_cap=max(DEFAULT_MESSAGE_CAP, len(ids) // 2 + 4096))
    run = _Dense(ch, ids, cap)
    dev = {g: [run.index[d] for d in mem] for g, mem in groups.items() if mem}
    outs = run.algo(i, n_hat, j, dev, {g: Knowledge() for g in dev}, dict(dev))
    return {g: out.members.ids() for g, out in outs.items()}, ch.transcript()
