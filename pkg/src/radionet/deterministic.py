"""Deterministic Leader Election (log log N energy) and Census (log^2 log N).

Both protocols run on a sparse ``Channel`` over the active devices only;
device ``i`` of the channel is the i-th smallest active ID.  Every recursive
call occupies a fixed number of slots whether or not anyone takes part, so
all devices stay in step using only the common parameters.  Calls nobody
joins are skipped with ``Channel.advance``.

Decisions (alone or not, merged or not, leader or not) are read off the
signals each device receives; the orchestration below never consults
another device's private state.
"""
from __future__ import annotations

import bisect
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

from .channel import DEFAULT_MESSAGE_CAP, Channel, Message, ModelKind, Transcript
from .codec import IdSet, pack_ints, unpack_ints
from .errors import ModelUnsupported, NoActiveDevices, PreconditionViolated
from .groups import (Group, ceil_log2, decode_info, encode_info, simple_census,
                     simple_census_slots)


_GID = struct.Struct("<Q")


def ceil_sqrt(x: int) -> int:
    r = math.isqrt(x)
    return r if r * r == x else r + 1


def loglog(n: int) -> int:
    """ceil(log2(log2(n))) for n >= 4."""
    lg = math.log2(n)
    v = math.ceil(math.log2(lg))
    # guard float error right at powers of two
    if 2 ** (v - 1) >= lg:
        v -= 1
    return v


def phase_count(n_space: int) -> int:
    """Smallest P with 2^P > ceil(log2 n_space), so SimpleCensus fits after P phases."""
    return ceil_log2(n_space).bit_length()


def _check_model(model: ModelKind) -> None:
    if not model.sender_feedback:
        raise ModelUnsupported(f"deterministic protocols need sender feedback, not {model.value}")


def _prepare(n: int, active) -> list[int]:
    ids = sorted(set(int(a) for a in active))
    if not ids:
        raise NoActiveDevices("no active devices")
    if ids[0] < 0 or ids[-1] >= n:
        raise PreconditionViolated(f"active IDs must lie in [0, {n})")
    return ids


# -- leader election ----------------------------------------------------------

@lru_cache(maxsize=None)
def detle_slots(n_hat: int) -> int:
    """Fixed slot budget of one DetLE call on ``n_hat`` group IDs."""
    if n_hat <= 2:
        return 2
    k = ceil_sqrt(n_hat)
    sub = detle_slots(k)
    return k * (1 + sub) + 1 + sub


@dataclass
class LeaderResult:
    leader_id: int | None
    is_leader: list  # per active device, its own verdict
    ids: list
    transcript: Transcript
    rep_counts: dict = field(default_factory=dict)
    phases_run: int = 0
    path: str = ""

    @property
    def leader_count(self) -> int:
        return sum(self.is_leader)


class _DetLE:
    """One execution of the phase-based election."""

    def __init__(self, ch: Channel):
        self.ch = ch
        self.gid_of_rep: dict = {}
        self.merges: list = []

    # one DetLE call: ``parts`` is a sorted list of (local ID, representative)
    def detle(self, n_hat: int, parts: list) -> None:
        ch = self.ch
        start = ch.slot
        if n_hat <= 2:
            (_, r0), (_, r1) = parts
            lsig, _ = ch.exchange({r0: pack_ints(self.gid_of_rep[r0])}, (r1,))
            lsig2, _ = ch.exchange({r1: pack_ints(self.gid_of_rep[r1])}, (r0,))
            if isinstance(lsig, Message) and isinstance(lsig2, Message):
                self.merges.append((r0, r1))
            return
        k = ceil_sqrt(n_hat)
        sub = detle_slots(k)
        promoted = []
        i = 0
        while i < len(parts):
            j = parts[i][0] // k
            e = i
            while e < len(parts) and parts[e][0] // k == j:
                e += 1
            block = parts[i:e]
            ch.advance(start + j * (1 + sub) - ch.slot)
            _, ssig = ch.exchange({r: pack_ints(lid) for lid, r in block}, ())
            if isinstance(ssig, Message):
                # heard its own message: alone in the interval
                promoted.append((j, block[0][1]))
            else:
                self.detle(k, [(lid - j * k, r) for lid, r in block])
            i = e
        ch.advance(start + k * (1 + sub) - ch.slot)
        if promoted:
            _, ssig = ch.exchange({r: pack_ints(lid) for lid, r in promoted}, ())
            if not isinstance(ssig, Message):
                self.detle(k, promoted)
        else:
            ch.advance(1)
        ch.advance(start + detle_slots(n_hat) - ch.slot)


def det_leader_election(n: int, active, *, preprocess: bool = False,
                        model: ModelKind = ModelKind.SENDER_CD, record: bool = False) -> LeaderResult:
    """Elect exactly one leader among ``active`` IDs drawn from ``[0, n)``."""
    _check_model(model)
    ids = _prepare(n, active)
    ch = Channel(len(ids), model, record=record)
    is_leader = [False] * len(ids)
    reps: dict = {}

    def finish(leader, phases, path):
        if leader is not None:
            is_leader[leader] = True
        return LeaderResult(ids[leader] if leader is not None else None, is_leader, ids,
                            ch.transcript(), reps, phases, path)

    if n < 4:
        leader = _emulated_census(ch, n, {d: i for i, d in enumerate(ids)})
        return finish(leader, 0, "direct")

    if preprocess:
        width = loglog(n)
        space = -(-n // width)
        groups = {}
        pre = ch.slot
        for q in range(space):
            lo = q * width
            a, b = bisect.bisect_left(ids, lo), bisect.bisect_left(ids, lo + width)
            if a == b:
                continue
            ch.advance(pre + q * simple_census_slots(width) - ch.slot)
            locals_ = {ids[i] - lo: i for i in range(a, b)}
            winner = _emulated_census(ch, width, locals_)
            for dev in locals_.values():
                if dev != winner:
                    ch.terminate(dev)
            groups[q] = Group(q, [winner])
        ch.advance(pre + space * simple_census_slots(width) - ch.slot)
    else:
        space = n
        groups = {d: Group(d, [i]) for i, d in enumerate(ids)}

    phases = phase_count(space)
    run = _DetLE(ch)
    for phase in range(phases + 1):
        # probe: masters transmit, everyone else listens; a lone master hears itself
        senders = {g.master: pack_ints(gid) for gid, g in groups.items()}
        others = {d for g in groups.values() for d in g.members[1:]}
        lsig, ssig = ch.exchange(senders, others)
        if isinstance(ssig, Message):
            (gid,) = unpack_ints(ssig.payload)
            return finish(groups[gid].master, phase, "single-group")
        if phase == phases:
            break
        rank = 0 if phase == 0 else 2 ** (phase - 1) - 1
        run.gid_of_rep = {}
        parts = []
        for gid in sorted(groups):
            rep = groups[gid].members[rank]
            run.gid_of_rep[rep] = gid
            reps[rep] = reps.get(rep, 0) + 1
            parts.append((gid, rep))
        run.merges = []
        run.detle(space, parts)
        partner = {}
        for r0, r1 in run.merges:
            partner[r0] = (r1, 0)
            partner[r1] = (r0, 1)
        # announcement slots: slot g belongs to the group with ID g
        base = ch.slot
        new_groups = {}
        for gid in sorted(groups):
            g = groups[gid]
            rep = g.members[rank]
            if rep in partner:
                other, pos = partner[rep]
                ogid = run.gid_of_rep[other]
                new_id = min(gid, ogid)
                note = pack_ints(1, new_id, pos)
            else:
                note = pack_ints(0)
            if g.size > 1:
                ch.advance(base + gid - ch.slot)
                lsig, _ = ch.exchange({rep: note}, set(g.members) - {rep})
                heard = unpack_ints(lsig.payload)
            else:
                heard = unpack_ints(note)
            if heard[0] == 0:
                for d in g.members:
                    ch.terminate(d)
                continue
            _, new_id, pos = heard
            slot_ = new_groups.setdefault(new_id, [None, None])
            slot_[pos] = g.members
        ch.advance(base + space - ch.slot)
        groups = {gid: Group(gid, a + b) for gid, (a, b) in new_groups.items()}

    # fallback: groups are now larger than ceil(log2 space)
    res = simple_census(ch, space, groups, {g.master: 0 for g in groups.values()})
    survivors = {d for g in groups.values() for d in g.members} - {res.leader}
    ch.exchange({res.leader: pack_ints(res.group.group_id)}, survivors)
    return finish(res.leader, phases, "simple-census")


def _emulated_census(ch: Channel, n_hat: int, locals_: dict, know: dict | None = None):
    """SimpleCensus on singleton groups, each device playing every rank."""
    ranks = ceil_log2(n_hat) + 1
    groups = {lid: Group(lid, [dev] * ranks) for lid, dev in locals_.items()}
    know = {dev: 0 for dev in locals_.values()} if know is None else know
    return simple_census(ch, n_hat, groups, know).leader


# -- census ------------------------------------------------------------------

@dataclass
class CensusOutcome:
    census: list | None
    leader_group: list  # device indices of the final leader group
    ids: list
    transcript: Transcript
    path: str = ""

    @property
    def announcer_id(self) -> int | None:
        return self.ids[self.leader_group[0]] if self.leader_group else None


class _DetCensus:
    def __init__(self, ch: Channel, top_l: int):
        self.ch = ch
        self.L = top_l
        self.know: dict = {}
        self._tc: dict = {}
        self._enc: dict = {}

    def slots(self, n_hat: int, l: int) -> int:
        key = (n_hat, l)
        if key in self._tc:
            return self._tc[key]
        if l >= self.L:
            t = simple_census_slots(n_hat) + 1
        elif n_hat <= 2:
            t = 3
        else:
            k = ceil_sqrt(n_hat)
            t = 1 + k * self.slots(k, l) + sum(self.slots(k, kk) for kk in range(l, self.L + 1))
            t += 2 * (self.L - l)
        self._tc[key] = t
        return t

    def _share(self, devices, mask: int) -> None:
        """Give every device in ``devices`` the information set ``mask``.

        Callers only use this when ``mask`` already contains what each of
        those devices knew (it includes their own group's centralized
        set), so plain assignment equals the union and lets members share
        one int object.
        """
        know = self.know
        for d in devices:
            know[d] = mask

    def _encode(self, gid: int, mask: int) -> bytes:
        # groups re-send the same set across nested calls; reuse the body
        hit = self._enc.get(id(mask))
        if hit is None or hit[0] is not mask:
            if len(self._enc) > 100_000:
                self._enc.clear()
            hit = (mask, encode_info(0, mask)[8:])
            self._enc[id(mask)] = hit
        return _GID.pack(gid) + hit[1]

    def _halt(self, devices) -> None:
        for d in devices:
            self.ch.terminate(d)
            self.know.pop(d, None)

    def census(self, n_hat: int, l: int, groups: dict):
        """DetCensus on ``groups`` (local ID -> member list, each of size 2^l).

        Returns the leader group's member list, or None when empty.  On
        return every member of the leader group knows the union of all
        input information.
        """
        ch = self.ch
        start = ch.slot
        total = self.slots(n_hat, l)
        if not groups:
            ch.advance(total)
            return None
        size = 2 ** l
        for lid, mem in groups.items():
            if len(mem) != size:
                raise PreconditionViolated(f"group {lid} has {len(mem)} members, expected {size}")
        know = self.know
        everyone = [d for mem in groups.values() for d in mem]
        if l >= self.L:
            res = simple_census(ch, n_hat, {lid: Group(lid, mem) for lid, mem in groups.items()}, know)
            lead = res.leader
            lsig, _ = ch.exchange({lead: self._encode(res.group.group_id, know[lead])},
                                  set(everyone) - {lead})
            _, mask = decode_info(lsig.payload)
            star = groups[res.group.group_id]
            self._share(star, mask)
            self._halt(d for lid, mem in groups.items() if lid != res.group.group_id for d in mem)
            return list(star)
        # probe: masters send their information, all other devices listen
        senders = {mem[0]: self._encode(lid, know.get(mem[0], 0)) for lid, mem in groups.items()}
        lsig, ssig = ch.exchange(senders, set(everyone) - senders.keys())
        if isinstance(ssig, Message):
            lid, mask = decode_info(ssig.payload)
            star = groups[lid]
            self._share(star, mask)
            ch.advance(start + total - ch.slot)
            return list(star)
        if n_hat <= 2:
            g0, g1 = groups[0], groups[1]
            both = set(g0) | set(g1)
            union = IdSet()
            for mem in (g0, g1):
                lsig, _ = ch.exchange({mem[0]: self._encode(0, know.get(mem[0], 0))}, both - {mem[0]})
                union = union | decode_info(lsig.payload)[1]
            merged = list(g0) + list(g1)
            self._share(merged, union)
            return merged
        k = ceil_sqrt(n_hat)
        # phase 1: one call per interval, leader groups renamed to the interval index
        by_interval: dict = {}
        for lid, mem in groups.items():
            by_interval.setdefault(lid // k, {})[lid % k] = mem
        sub = self.slots(k, l)
        phase1 = ch.slot
        leaders = {}
        for j in sorted(by_interval):
            ch.advance(phase1 + j * sub - ch.slot)
            got = self.census(k, l, by_interval[j])
            if got is not None:
                leaders[j] = got
        ch.advance(phase1 + k * sub - ch.slot)
        # phase 2: one call per size class
        tops = {}
        for kk in range(l, self.L + 1):
            cls = {j: mem for j, mem in leaders.items() if len(mem) == 2 ** kk}
            got = self.census(k, kk, cls)
            if got is not None:
                tops[kk] = got
        # phase 3: funnel everything into the largest class, ranks L-1 down to l
        star = tops.get(self.L)
        for kk in range(self.L - 1, l - 1, -1):
            cls = tops.get(kk)
            # first slot: the largest class passes down what it has gathered
            senders, listen = {}, set(cls or ())
            if star is not None:
                senders[star[kk]] = self._encode(0, know[star[kk]])
                if kk >= 1:
                    listen.add(star[kk - 1])
                if kk == l:
                    listen.update(star)
            listen -= senders.keys()
            lsig, _ = ch.exchange(senders, listen)
            got = IdSet()
            if isinstance(lsig, Message):
                got = decode_info(lsig.payload)[1]
            elif cls is not None:
                # silence: no larger class exists, this one leads
                star = cls
                ch.advance(1)
                continue
            if star is None:
                ch.advance(1)
                continue
            # second slot: the class master reports upward
            senders, listen = {}, set()
            if cls is not None:
                senders[cls[0]] = self._encode(0, know[cls[0]])
            if kk >= 1:
                listen.add(star[kk - 1])
            if kk == l:
                listen.update(star)
            lsig, _ = ch.exchange(senders, listen)
            if isinstance(lsig, Message):
                got = got | decode_info(lsig.payload)[1]
            if cls is not None:
                self._halt(cls)
            if kk == l:
                self._share(star, got)
            elif kk >= 1:
                low = star[kk - 1]
                know[low] = know[low] | got
        ch.advance(start + total - ch.slot)
        return star


def det_census(n: int, active, *, model: ModelKind = ModelKind.SENDER_CD, record: bool = False,
               message_cap: int | None = None) -> CensusOutcome:
    """Collect the exact set of active IDs at one device.

    ``message_cap`` defaults to the larger of the channel default and an
    ID bitmap over ``[0, n)``, since the final reports carry whole ID sets.
    """
    _check_model(model)
    ids = _prepare(n, active)
    if message_cap is None:
        message_cap = max(DEFAULT_MESSAGE_CAP, n // 8 + 64)
    ch = Channel(len(ids), model, record=record, message_cap=message_cap)
    know = {i: IdSet(d, 1) for i, d in enumerate(ids)}
    if n < 4:
        lead = _emulated_census(ch, n, {d: i for i, d in enumerate(ids)}, know)
        return CensusOutcome(know[lead].ids(), [lead], ids, ch.transcript(), "direct")
    run = _DetCensus(ch, loglog(n))
    run.know = know
    star = run.census(n, 0, {d: [i] for i, d in enumerate(ids)})
    return CensusOutcome(know[star[0]].ids(), star, ids, ch.transcript(), "recursive")
