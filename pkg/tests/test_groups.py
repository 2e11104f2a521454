from __future__ import annotations

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from radionet.channel import Channel, ModelKind
from radionet.codec import IdSet
from radionet.errors import OverlapError, PreconditionViolated
from radionet.groups import (Group, ceil_log2, is_centralized, merge_groups, simple_census,
                             simple_census_slots)


def _setup(n_hat, gids, size=None):
    """Groups at ``gids`` with fresh device indices; each master knows its group ID."""
    size = size or ceil_log2(n_hat) + 1
    groups, know, dev = {}, {}, 0
    for g in gids:
        members = list(range(dev, dev + size))
        dev += size
        groups[g] = Group(g, members)
        know[members[0]] = IdSet(g, 1)
    return groups, know, dev


def test_single_space_master_leads():
    groups, know, n = _setup(1, [0])
    ch = Channel(n, ModelKind.SENDER_CD)
    res = simple_census(ch, 1, groups, know)
    assert res.leader == groups[0].master and ch.slot == 0


def test_two_ids_rank_one_of_group_zero():
    groups, know, n = _setup(2, [0, 1])
    ch = Channel(n, ModelKind.SENDER_CD)
    res = simple_census(ch, 2, groups, know)
    assert res.leader == groups[0].members[1]


def test_four_ids_groups_one_and_three():
    groups, know, n = _setup(4, [1, 3], size=3)
    ch = Channel(n, ModelKind.SENDER_CD)
    res = simple_census(ch, 4, groups, know)
    assert res.leader == groups[1].members[2]
    assert res.info == IdSet(1, 1) | IdSet(3, 1)
    assert ch.slot == 6


def test_size_precondition():
    groups, know, n = _setup(8, [0], size=3)
    with pytest.raises(PreconditionViolated):
        simple_census(Channel(n, ModelKind.SENDER_CD), 8, groups, know)


@pytest.mark.parametrize("n_hat", range(1, 9))
def test_exhaustive_placements(n_hat):
    h = ceil_log2(n_hat)
    for r in range(1, n_hat + 1):
        for gids in itertools.combinations(range(n_hat), r):
            for model in (ModelKind.SENDER_CD, ModelKind.NO_CD):
                groups, know, n = _setup(n_hat, gids)
                ch = Channel(n, model)
                res = simple_census(ch, n_hat, groups, know)
                # oracle: the lowest group ID wins; its rank-h device leads
                assert res.leader == groups[min(gids)].members[h]
                assert res.info == IdSet.of(sum(1 << g for g in gids))
                assert ch.slot == simple_census_slots(n_hat)
                tr = ch.transcript()
                assert max(tr.transmits) <= 1 and max(tr.listens) <= 2


@pytest.mark.parametrize("n_hat", [11, 13, 19, 23, 37])
def test_deep_padding_single_groups(n_hat):
    # padded subtrees can start past the clipped end of their parent
    h = ceil_log2(n_hat)
    for gid in range(n_hat):
        groups, know, n = _setup(n_hat, [gid])
        ch = Channel(n, ModelKind.SENDER_CD)
        res = simple_census(ch, n_hat, groups, know)
        assert res.leader == groups[gid].members[h]
        assert ch.slot == simple_census_slots(n_hat)


@pytest.mark.parametrize("j", range(1, 8))
def test_power_of_two_slot_count(j):
    assert simple_census_slots(2 ** j) == 2 ** (j + 1) - 2


def test_merge_examples():
    g = merge_groups(Group(0, ["a", "b"]), Group(1, ["c", "d"]))
    assert g.members == ["a", "b", "c", "d"] and g.master == "a" and g.rank_of("c") == 2
    same = merge_groups(Group(4, ["a"]), Group(5, []))
    assert same == Group(4, ["a"])
    with pytest.raises(OverlapError):
        merge_groups(Group(0, [1, 2]), Group(1, [2]))


@given(st.lists(st.integers(0, 50), min_size=3, max_size=30, unique=True))
def test_merge_associative_multiset(devs):
    a, b, c = Group(0, devs[0::3]), Group(1, devs[1::3]), Group(2, devs[2::3])
    left = merge_groups(merge_groups(a, b), c)
    right = merge_groups(a, merge_groups(b, c))
    assert sorted(left.members) == sorted(right.members) == sorted(devs)
    assert left.members == right.members


def test_local_view_and_centralized():
    g = Group(7, [3, 1, 2])
    view = g.local_view(2)
    assert (view.group_id, view.size, view.rank, view.master) == (7, 3, 2, 3)
    know = {3: IdSet(0, 0b111), 1: IdSet(1, 1)}
    assert is_centralized(g, know)
    know[2] = IdSet(9, 1)
    assert not is_centralized(g, know)
