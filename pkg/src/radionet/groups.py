"""Groups of devices and the SimpleCensus building block.

A ``Group`` is the common knowledge its members share: its ID, its ordered
member list (rank = position) and therefore its size and master.  Protocols
update a ``Group`` only at the moments its members would learn the change
from a channel signal, so the object doubles as every member's local view.

Per-device information sets I(s) live in a ``know`` dict mapping device index
to an ``IdSet`` (plain int bitmasks are accepted too, see ``codec``).
"""
from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field
from functools import lru_cache

from .channel import Channel, Message
from .codec import IdSet
from .errors import OverlapError, PreconditionViolated


@dataclass
class Group:
    group_id: int
    members: list = field(default_factory=list)

    @property
    def master(self) -> int:
        return self.members[0]

    @property
    def size(self) -> int:
        return len(self.members)

    def rank_of(self, device: int) -> int:
        return self.members.index(device)

    def local_view(self, device: int) -> "LocalView":
        return LocalView(self.group_id, self.size, self.rank_of(device), self.master)


@dataclass(frozen=True)
class LocalView:
    """What one member knows about its own group."""

    group_id: int
    size: int
    rank: int
    master: int


def is_centralized(group: Group, know: dict) -> bool:
    union = IdSet()
    for d in group.members:
        union = union | know.get(d, 0)
    return union == know.get(group.master, 0)


def merge_groups(g: Group, other: Group, new_id: int | None = None) -> Group:
    """Concatenate ``other`` after ``g``; ``g``'s master stays master."""
    if not other.members:
        return Group(g.group_id if new_id is None else new_id, list(g.members))
    if not set(g.members).isdisjoint(other.members):
        raise OverlapError("groups share members")
    return Group(g.group_id if new_id is None else new_id, g.members + other.members)


def ceil_log2(x: int) -> int:
    return 0 if x <= 1 else (x - 1).bit_length()


@lru_cache(maxsize=None)
def simple_census_slots(n_hat: int) -> int:
    """Slots used by SimpleCensus on an ID space of size ``n_hat``."""
    if n_hat <= 1:
        return 0
    return 2 * simple_census_slots((n_hat + 1) // 2) + 2


_INFO = struct.Struct("<QQ")


def encode_info(gid: int, info) -> bytes:
    """Group ID, then an ID set as offset plus trimmed bitmask."""
    s = IdSet.of(info)
    return _INFO.pack(gid, s.offset) + s.bits.to_bytes((s.bits.bit_length() + 7) // 8, "little")


def decode_info(payload: bytes) -> tuple[int, IdSet]:
    gid, low = _INFO.unpack_from(payload)
    return gid, IdSet(low, int.from_bytes(payload[16:], "little"))


@dataclass
class CensusResult:
    leader: int | None
    group: Group | None
    info: object = 0


def simple_census(ch: Channel, n_hat: int, groups, know: dict, *,
                  encode=encode_info, decode=decode_info) -> CensusResult:
    """Run SimpleCensus over group IDs ``0..n_hat-1``.

    ``groups`` maps group ID to a centralized ``Group``.  A member list may
    repeat a device to let it play several consecutive ranks (virtual
    devices); the channel then charges that one device for every role.
    The elected leader's entry in ``know`` is replaced by the merged set.
    Information values only need ``|``; ``encode(gid, info)`` and
    ``decode(payload) -> (gid, info)`` put them on the air.
    Uses exactly ``simple_census_slots(n_hat)`` slots.
    """
    h_top = ceil_log2(n_hat)
    gmap = groups if isinstance(groups, dict) else {g.group_id: g for g in groups}
    for gid, g in gmap.items():
        if not 0 <= gid < n_hat:
            raise PreconditionViolated(f"group ID {gid} outside [0, {n_hat})")
        if g.size < h_top + 1:
            raise PreconditionViolated(
                f"group {gid} has {g.size} members; SimpleCensus({n_hat}) needs {h_top + 1}")
    ids = sorted(gmap)
    if not ids:
        ch.advance(simple_census_slots(n_hat))
        return CensusResult(None, None, 0)
    leader, gid = _census(ch, 0, n_hat, n_hat, h_top, ids, gmap, know, encode, decode)
    return CensusResult(leader, gmap[gid], know[leader])


def _census(ch, lo, size, hi, h, ids, gmap, know, encode, decode):
    # the node spans [lo, lo + size); IDs at or above ``hi`` are padding
    # that belongs to a sibling, so each ID lives in exactly one subtree
    a = bisect.bisect_left(ids, lo)
    b = bisect.bisect_left(ids, min(lo + size, hi))
    if b <= a:
        ch.advance(simple_census_slots(size))
        return None
    if size == 1:
        g = gmap[ids[a]]
        return g.master, g.group_id
    half = (size + 1) // 2
    end = min(lo + size, hi)
    first = _census(ch, lo, half, min(lo + half, end), h - 1, ids, gmap, know, encode, decode)
    second = _census(ch, lo + half, half, end, h - 1, ids, gmap, know, encode, decode)
    # rank-h devices of every group in range listen to both announcements
    rank_h = {gmap[gid].members[h] for gid in ids[a:b]}
    got = []
    for who in (first, second):
        senders = {}
        if who is not None:
            senders[who[0]] = encode(who[1], know[who[0]])
        lsig, _ = ch.exchange(senders, rank_h - senders.keys())
        # a sender knows its own message, which is exactly what listeners heard
        got.append(decode(lsig.payload) if isinstance(lsig, Message) else None)
    # every listener applies the same rule: the group named first (or else
    # second) won, and that group's rank-h device merges both sets
    if got[0] is not None:
        win = got[0][0]
    elif got[1] is not None:
        win = got[1][0]
    else:
        return None
    dev = gmap[win].members[h]
    merged = know.get(dev)
    for item in got:
        if item is not None:
            merged = item[1] if merged is None else merged | item[1]
    know[dev] = merged
    return dev, win
