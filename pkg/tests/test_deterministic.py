from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radionet.channel import ModelKind
from radionet.deterministic import ceil_sqrt, det_census, det_leader_election, loglog, phase_count
from radionet.errors import ModelUnsupported, NoActiveDevices, PreconditionViolated
from radionet.groups import ceil_log2

CD_MODELS = (ModelKind.SENDER_CD, ModelKind.STRONG_CD)


def _one_leader(n, active, **kw):
    res = det_leader_election(n, active, **kw)
    assert res.leader_count == 1
    assert res.leader_id in set(active)
    return res


def test_two_devices():
    res = _one_leader(2, [0, 1])
    assert res.transcript.max_energy <= 4


def test_lone_device_exits_early():
    res = _one_leader(16, [3])
    assert res.leader_id == 3 and res.path == "single-group"


def test_interval_routing_small_cases():
    _one_leader(4, [0, 3])
    _one_leader(16, [1, 2, 9])


@pytest.mark.parametrize("n", range(1, 9))
def test_exhaustive_small(n):
    for r in range(1, n + 1):
        for active in itertools.combinations(range(n), r):
            for pre in (False, True):
                _one_leader(n, active, preprocess=pre)
            assert det_census(n, active).census == list(active)


@settings(max_examples=60, deadline=None)
@given(st.integers(9, 64).flatmap(
    lambda n: st.tuples(st.just(n), st.sets(st.integers(0, n - 1), min_size=1))),
    st.sampled_from(CD_MODELS), st.booleans())
def test_sampled_subsets(case, model, pre):
    n, active = case
    active = sorted(active)
    _one_leader(n, active, model=model, preprocess=pre)
    assert det_census(n, active, model=model).census == active


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 300).flatmap(
    lambda n: st.tuples(st.just(n), st.sets(st.integers(0, n - 1), min_size=2))))
def test_representative_at_most_two_phases(case):
    n, active = case
    res = det_leader_election(n, sorted(active))
    assert all(v <= 2 for v in res.rep_counts.values())


def test_census_examples():
    assert det_census(8, range(8)).census == list(range(8))
    assert det_census(8, [5]).census == [5]
    assert det_census(256, range(256)).census == list(range(256))


def test_census_half_occupancy():
    active = list(range(0, 1024, 2))
    res = det_census(1024, active)
    assert res.census == active and res.announcer_id in active


def test_same_input_same_transcript():
    a = det_leader_election(512, range(0, 512, 3), preprocess=True, record=True)
    b = det_leader_election(512, range(0, 512, 3), preprocess=True, record=True)
    assert a.transcript.digest() == b.transcript.digest()


@pytest.mark.parametrize("model", [ModelKind.RECEIVER_CD, ModelKind.NO_CD])
def test_needs_sender_feedback(model):
    with pytest.raises(ModelUnsupported):
        det_leader_election(8, [1], model=model)
    with pytest.raises(ModelUnsupported):
        det_census(8, [1], model=model)


def test_input_contract():
    with pytest.raises(NoActiveDevices):
        det_leader_election(8, [])
    with pytest.raises(PreconditionViolated):
        det_census(8, [8])


def test_linear_slots_with_preprocessing():
    for e in (8, 10, 12):
        n = 2 ** e
        res = det_leader_election(n, range(n), preprocess=True)
        assert res.transcript.slot_count <= 32 * n


def test_phase_count_covers_census_sizes():
    # groups after P phases have 2^P members, which SimpleCensus(n) accepts
    for n in range(4, 5000):
        assert 2 ** phase_count(n) >= ceil_log2(n) + 1


@given(st.integers(1, 10 ** 12))
def test_ceil_sqrt(x):
    r = ceil_sqrt(x)
    assert (r - 1) ** 2 < x <= r * r


def test_loglog_values():
    assert [loglog(2 ** e) for e in (4, 8, 16)] == [2, 3, 4]
