from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radionet.channel import IDLE, LISTEN, SILENCE, Message, ModelKind, Transmit, derive_rng, run
from radionet.errors import (InvalidSchedule, ModelUnsupported, NoActiveDevices, NTooSmall,
                             PreconditionViolated)
from radionet.randomized import (D_INF, CountConfig, LabelCounts, _checkpoint, _Leader,
                                 _max_binomial, assign_ids, draw_labels, estimate_network_size,
                                 exponential_search, id_count, label_from_u, label_mass,
                                 labels_from_u, make_schedule, probe_test, probe_verdict,
                                 test_network_size as tns, trivial_algorithm)

S, C, R, N = ModelKind.STRONG_CD, ModelKind.SENDER_CD, ModelKind.RECEIVER_CD, ModelKind.NO_CD
GEO = make_schedule("geometric")


def _close(a, b, tol):
    """Two-sample check: means agree within ``tol`` standard errors."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size) or 1e-9
    return abs(a.mean() - b.mean()) <= tol * se


# -- schedules ---------------------------------------------------------------------

def test_schedule_values():
    assert [GEO.d(i) for i in range(1, 6)] == [14, 28, 56, 112, 224]
    assert GEO.d(0) == 0
    assert make_schedule("polynomial", eps=2).d(2) == 196
    assert [make_schedule("exponential").d(i) for i in (1, 2, 3)] == [14, 2 ** 14, D_INF]
    dexp = make_schedule("double_exp", eps=0.6)
    assert [dexp.d(i) for i in range(1, 5)] == [14, 26, 55, 157]


@pytest.mark.parametrize("kw", [dict(kind="geometric", d1=10), dict(kind="geometric", gamma=1.0),
                                dict(kind="double_exp", eps=0.5), dict(kind="polynomial", eps=0),
                                dict(kind="fibonacci")])
def test_schedule_rejected(kw):
    with pytest.raises(InvalidSchedule):
        make_schedule(**kw)


@settings(max_examples=50)
@given(st.sampled_from(["geometric", "polynomial", "exponential", "double_exp"]),
       st.integers(14, 40))
def test_schedule_growth(kind, d1):
    try:
        sched = make_schedule(kind, d1)
    except InvalidSchedule:
        return
    prev = sched.d(1)
    for i in range(2, 12):
        cur = sched.d(i)
        if cur >= D_INF:
            break
        assert cur >= sched.gamma * prev
        prev = cur


def test_i_hat_and_index():
    assert GEO.i_hat(12) == 1 and GEO.i_hat(40) == 3 and GEO.i_hat(14) == 1
    assert GEO.index_of(56) == 3 and GEO.index_of(57) is None


# -- labels ------------------------------------------------------------------------

def test_label_edges():
    assert label_from_u(0.0, 14) == 14
    total = 2 ** -7 / (1 - 2 ** -0.5)
    assert math.isclose(label_mass(14), total) and abs(total - 0.02666) < 1e-4
    assert label_from_u(total, 14) is None
    assert label_from_u(total - 1e-12, 14) is not None


def test_closed_form_matches_interval_walk():
    u = derive_rng(1).random(20000) * label_mass(14) * 1.05
    fast = labels_from_u(u, 14)
    slow = [label_from_u(float(x), 14) for x in u]
    assert fast.tolist() == [-1 if k is None else k for k in slow]


def test_label_frequencies():
    n = 10 ** 7
    labels = draw_labels(derive_rng(2), n, 14)
    for k in range(14, 21):
        p = 2 ** (-k / 2)
        sd = math.sqrt(n * p * (1 - p))
        assert abs((labels == k).sum() - n * p) <= 3 * sd


def test_label_counts_match_listed_draws():
    n, trials = 2 ** 16, 300
    listed = np.array([[int((draw_labels(derive_rng(s, 1), n, 14) == k).sum()) for k in range(14, 20)]
                       for s in range(trials)])
    counted = np.array([[LabelCounts(derive_rng(s, 9), n, 14)(k) for k in range(14, 20)]
                        for s in range(trials)])
    for col in range(6):
        assert _close(listed[:, col], counted[:, col], 4)
        assert abs(counted[:, col].mean() - n * 2 ** (-(14 + col) / 2)) < 0.1 * n * 2 ** (-(14 + col) / 2)


def test_label_structure_at_large_n():
    # counts of labels k_hat - 1 and k_hat near sqrt(2^k); labels start at 14,
    # so the check runs where k_hat is a label
    n = 2 ** 20
    k_hat = 20
    hits = 0
    for s in range(500):
        counts = LabelCounts(derive_rng(s, 1), n, 14)
        hits += any(math.sqrt(2 ** k) / 1.5 <= counts(k) <= 1.5 * math.sqrt(2 ** k)
                    for k in (k_hat - 1, k_hat))
    assert hits >= 475


# -- trivial algorithm ---------------------------------------------------------------

def _contract(res, n, d):
    if res.exceeds:
        return n > d
    return res.estimate is not None and n / 2 <= res.estimate <= 2 * n


@pytest.mark.parametrize("model", [S, C, R])
def test_trivial_lone_device(model):
    for s in range(2000):
        res = trivial_algorithm(1, 16, model, seed=s)
        assert res.estimate == 1 and res.agreed


@pytest.mark.parametrize("model", list(ModelKind))
@pytest.mark.parametrize("n", [2, 3, 5, 17, 100, 10 ** 5])
def test_trivial_contract(model, n):
    ok = sum(_contract(trivial_algorithm(n, 16, model, seed=s), n, 16) for s in range(300))
    assert ok >= 299


def test_trivial_large_population_exceeds():
    assert all(trivial_algorithm(10 ** 5, 16, seed=s).exceeds for s in range(1000))


def test_trivial_energy_depends_on_d_only():
    small = trivial_algorithm(50, 2 ** 14, C, seed=1).energy.max_energy
    big = trivial_algorithm(10 ** 6, 2 ** 14, C, seed=1).energy.max_energy
    assert small <= 2 * 64 * 17 and big <= 2 * 64 * 17


def test_trivial_nocd_needs_two():
    with pytest.raises(PreconditionViolated):
        trivial_algorithm(1, 16, N)


# -- Test(i) and exponential search ----------------------------------------------------

def test_probe_verdict_function():
    assert probe_verdict(0) is True
    assert all(probe_verdict(k) is False for k in range(1, 10))


def test_probe_single_device():
    outcomes = {probe_test(1, 1, make_schedule("geometric", 14), S, seed=s).transmitters
                for s in range(20000)}
    assert outcomes <= {0, 1}


def test_probe_examples():
    sched4 = make_schedule("geometric", 14)
    sched4._memo[:] = [4]  # d_1 = 4 for this check only
    low = sum(not probe_test(2 ** 12, 1, sched4, R, seed=s).at_least for s in range(500))
    high = sum(probe_test(2 ** 12, 3, GEO, R, seed=s).at_least for s in range(500))
    assert low >= 495 and high >= 495


def test_probe_needs_listener_cd():
    with pytest.raises(ModelUnsupported):
        probe_test(10, 1, GEO, C)
    with pytest.raises(ModelUnsupported):
        exponential_search(10, GEO, N)


class ProbeDevice:
    """One Test(i) slot played by a single device."""

    def __init__(self, p):
        self.p, self.done, self.output = p, False, None
        self.sent = False

    def act(self, slot, rng):
        self.sent = rng.random() < self.p
        return Transmit(b"t") if self.sent else LISTEN

    def receive(self, slot, signal):
        self.output = False if self.sent else signal is SILENCE
        self.done = True


def test_probe_dual_route():
    n, d = 64, 6
    p = 2.0 ** -d
    per_device = []
    for s in range(1500):
        tr = run(lambda _: [ProbeDevice(p) for _ in range(n)], R, None, seed=s, slot_limit=2)
        outs = set(tr.outputs)
        if False in outs:
            # whoever hears anything but silence agrees with the transmitters
            assert outs == {False}
        per_device.append(outs == {True})
    counted = [probe_test(n, 1, _fixed(d), R, seed=s).at_least for s in range(1500)]
    exact = (1 - p) ** n
    for sample in (per_device, counted):
        assert abs(np.mean(sample) - exact) <= 4 * math.sqrt(exact * (1 - exact) / 1500)


def _fixed(d1):
    sched = make_schedule("geometric", 14)
    sched._memo[:] = [d1]
    return sched


def test_search_examples():
    for s in range(50):
        assert exponential_search(2 ** 12, GEO, S, seed=s).i_tilde in (1, 2)
    good = sum(exponential_search(2 ** 40, GEO, R, seed=s).i_tilde in (2, 3, 4) for s in range(500))
    assert good >= 475
    a = exponential_search(2 ** 30, GEO, S, seed=7)
    assert a == exponential_search(2 ** 30, GEO, S, seed=7)


def test_search_needs_devices():
    with pytest.raises(NoActiveDevices):
        exponential_search(0, GEO, S)


# -- ID assignment ------------------------------------------------------------------

def test_no_participants():
    for model in ModelKind:
        assert assign_ids(0, 1024, model).assigned == 0


def test_n_tilde_floor():
    with pytest.raises(NTooSmall):
        id_count(62)
    with pytest.raises(NTooSmall):
        tns(1000, 62)


def test_assignment_thresholds():
    big_n = id_count(1024)
    strong = sum(assign_ids(1024, 1024, S, seed=s).assigned > 0.325 * big_n for s in range(200))
    nocd = sum(assign_ids(1024, 4096, N, seed=s).assigned < 0.325 ** 2 * big_n for s in range(200))
    assert strong >= 190 and nocd >= 190


class FeedbackAssign:
    """Per-device ID assignment with sender feedback: keep slot i if heard own message."""

    def __init__(self, p, slots):
        self.p, self.last, self.done, self.output = p, slots - 1, False, []
        self.sent = False

    def act(self, slot, rng):
        self.done = slot == self.last
        self.sent = rng.random() < self.p
        return Transmit(b"") if self.sent else IDLE

    def receive(self, slot, signal):
        if isinstance(signal, Message):
            self.output.append(slot)


class PairedAssign:
    """Per-device ID assignment without sender feedback: slots 2i, 2i+1, t1, t2."""

    def __init__(self, p, pairs):
        self.p, self.last, self.done, self.output = p, 4 * pairs - 1, False, []

    def act(self, slot, rng):
        self.done = slot == self.last
        phase = slot % 4
        if phase == 0:
            self.a, self.b = rng.random() < self.p, rng.random() < self.p
            self.heard_a = self.heard_b = self.at_t1 = self.answer = False
            self.won = False
        only_a, only_b = self.a and not self.b, self.b and not self.a
        if phase == 0:
            return Transmit(b"") if self.a else (LISTEN if self.b else IDLE)
        if phase == 1:
            return Transmit(b"") if self.b else (LISTEN if self.a else IDLE)
        if phase == 2:
            if only_a and self.heard_b:
                self.at_t1 = True
                return Transmit(b"")
            return LISTEN if only_b and self.heard_a else IDLE
        if only_b and self.answer:
            return Transmit(b"")
        return LISTEN if self.at_t1 else IDLE

    def receive(self, slot, signal):
        lone = isinstance(signal, Message)
        phase = slot % 4
        if phase == 0 and not self.a:
            self.heard_a = lone
        elif phase == 1 and not self.b:
            self.heard_b = lone
        elif phase == 2 and not self.at_t1:
            self.answer = lone
        elif phase == 3 and self.at_t1 and lone:
            self.output.append(slot // 4)


@pytest.mark.parametrize("model", list(ModelKind))
def test_assignment_dual_route(model):
    m, n_tilde, c_id, trials = 100, 100, 4, 150
    big_n = id_count(n_tilde, c_id)
    p = 1 / n_tilde
    feedback = model.sender_feedback
    ids_a, e_a, ids_b, e_b = [], [], [], []
    for s in range(trials):
        if feedback:
            devs = [FeedbackAssign(p, big_n) for _ in range(m)]
        else:
            devs = [PairedAssign(p, big_n) for _ in range(m)]
        tr = run(lambda _: devs, model, None, seed=s, slot_limit=4 * big_n + 1, record=False)
        taken = [i for d in tr.outputs for i in d]
        assert len(taken) == len(set(taken))   # an ID never has two owners
        ids_a.append(len(taken))
        e_a.append(int(tr.energies().sum()))
        res = assign_ids(m, n_tilde, model, seed=s, c_id=c_id)
        ids_b.append(res.assigned)
        e_b.append(int(res.energy.sum()))
    if feedback:
        exact = big_n * m * p * (1 - p) ** (m - 1)
    else:
        exact = big_n * m * (m - 1) * (p * (1 - p)) ** 2 * (1 - p) ** (2 * (m - 2))
    for sample in (ids_a, ids_b):
        arr = np.asarray(sample, float)
        assert abs(arr.mean() - exact) <= 4 * arr.std(ddof=1) / math.sqrt(trials)
    assert _close(e_a, e_b, 4)


def test_max_binomial_dual_route():
    rng = derive_rng(3)
    drawn = [_max_binomial(rng, 50, 20, 0.3) for _ in range(3000)]
    direct = rng.binomial(20, 0.3, size=(3000, 50)).max(axis=1)
    assert _close(drawn, direct, 4)


# -- Test-Network-Size ------------------------------------------------------------------

@pytest.mark.parametrize("model", list(ModelKind))
def test_tns_window(model):
    elect = sum(tns(1000, 1000, model, seed=s).leader is not None for s in range(100))
    quiet_hi = sum(tns(1000, 16000, model, seed=s).leader is None for s in range(100))
    assert elect >= 85 and quiet_hi >= 95


def test_tns_leader_collected_enough():
    for s in range(50):
        res = tns(1000, 1000, C, seed=s)
        if res.leader is not None:
            assert res.collected >= 0.325 * res.n_ids
            assert 0 <= res.leader < 1000 and 0 <= res.leader_id < res.n_ids


def test_tns_no_participants():
    assert tns(0, 1000, S).leader is None


# -- checkpoints ---------------------------------------------------------------------

def _ck(ks, model):
    return _checkpoint([_Leader(k, i) for i, k in enumerate(ks)], model)


@pytest.mark.parametrize("model", list(ModelKind))
def test_checkpoint_odd_first(model):
    won, agreed, listens, _ = _ck([15, 16], model)
    assert (won, agreed, listens) == (15, True, 1)
    won, agreed, _, _ = _ck([16], model)
    assert (won, agreed) == (16, True)
    assert _ck([], model)[:2] == (None, True)


def test_checkpoint_ambiguity_is_failure():
    # two even leaders cannot tell their collision from success without feedback
    assert _ck([16, 18], N)[1] is False
    assert _ck([16, 18], C)[:2] == (None, True)
    # two odd leaders collide in A; a lone even leader then wins in B
    assert _ck([15, 17, 16], S)[:2] == (16, True)


# -- estimate-network-size ----------------------------------------------------------

def test_small_population_uses_trivial_path():
    for s in range(100):
        res = estimate_network_size(100, GEO, C, seed=s)
        assert res.decided_by == "trivial" and res.checkpoints == 0
        assert res.success(100)


def test_estimate_large_population():
    for model in ModelKind:
        for s in range(3):
            res = estimate_network_size(2 ** 20, GEO, model, seed=s)
            assert res.success(2 ** 20) and res.decided_by == "checkpoint"


def test_listed_and_counted_routes_agree():
    n, trials = 2 ** 15, 40
    listed = [estimate_network_size(n, GEO, C, seed=s) for s in range(trials)]
    counted = [estimate_network_size(n, GEO, C, seed=s, config=CountConfig(materialize_limit=0))
               for s in range(trials)]
    assert sum(r.success(n) for r in listed) >= 36
    assert sum(r.success(n) for r in counted) >= 36
    assert all(r.energy.exact for r in listed) and not any(r.energy.exact for r in counted)
    assert _close([r.checkpoint_listens for r in listed], [r.checkpoint_listens for r in counted], 4)
    # the counted route reports an upper bound
    assert np.mean([r.energy.max_energy for r in counted]) >= np.mean([r.energy.max_energy for r in listed])


def test_success_implies_agreement():
    for s in range(10):
        res = estimate_network_size(2 ** 16, GEO, N, seed=s)
        if res.success(2 ** 16):
            assert res.agreed


def test_slot_limit_flags_failure():
    res = estimate_network_size(2 ** 20, GEO, C, seed=0, config=CountConfig(slot_limit=10))
    assert res.estimate is None and res.limit_exceeded


def test_estimate_preconditions():
    with pytest.raises(NoActiveDevices):
        estimate_network_size(0, GEO)
    with pytest.raises(PreconditionViolated):
        estimate_network_size(1, GEO, N)


def test_estimate_reproducible():
    a = estimate_network_size(2 ** 18, GEO, S, seed=4)
    b = estimate_network_size(2 ** 18, GEO, S, seed=4)
    assert a == b
