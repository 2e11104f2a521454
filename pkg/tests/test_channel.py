from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radionet.channel import (IDLE, LISTEN, NOISE, SILENCE, Channel, Message, ModelKind, Transmit,
                              arbitrate, derive_rng, resolve, run)
from radionet.errors import MessageTooLarge, PreconditionViolated, SlotLimitExceeded

S, C, R, N = ModelKind.STRONG_CD, ModelKind.SENDER_CD, ModelKind.RECEIVER_CD, ModelKind.NO_CD

# Independent signal table, written from the model definitions.
# Keys: (model, transmitters); values: (sender signal, listener signal).
# "M" stands for the lone message.
TABLE = {
    (S, 0): (None, "S"), (S, 1): ("M", "M"), (S, 2): ("N", "N"), (S, 3): ("N", "N"),
    (C, 0): (None, "S"), (C, 1): ("M", "M"), (C, 2): ("S", "S"), (C, 3): ("S", "S"),
    (R, 0): (None, "S"), (R, 1): (None, "M"), (R, 2): (None, "N"), (R, 3): (None, "N"),
    (N, 0): (None, "S"), (N, 1): (None, "M"), (N, 2): (None, "S"), (N, 3): (None, "S"),
}


def _code(sig, lone):
    if sig is None:
        return None
    if sig is SILENCE:
        return "S"
    if sig is NOISE:
        return "N"
    assert isinstance(sig, Message) and sig.payload == lone
    return "M"


@pytest.mark.parametrize("model", list(ModelKind))
@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_signal_table(model, k):
    msgs = [bytes([65 + i]) for i in range(k)]
    actions = [Transmit(m) for m in msgs] + [LISTEN, IDLE]
    out = arbitrate(actions, model)
    want_s, want_l = TABLE[(model, k)]
    lone = msgs[0] if k == 1 else None
    for sig in out[:k]:
        assert _code(sig, lone) == want_s
    assert _code(out[k], lone) == want_l
    assert out[k + 1] is None


def test_sender_cd_collision_all_silence():
    out = arbitrate([Transmit(b"m1"), Transmit(b"m2"), LISTEN], C)
    assert out == [SILENCE, SILENCE, SILENCE]


def test_noise_only_with_listener_cd():
    for model in ModelKind:
        for k in range(4):
            lsig, _ = resolve([b"x"] * k, model)
            assert (lsig is NOISE) == (model.listener_cd and k >= 2)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_listener_information_monotone(k):
    def weaken(sig):
        return SILENCE if sig is NOISE else sig
    msgs = [b"q"] * k
    assert resolve(msgs, C)[0] == weaken(resolve(msgs, S)[0])
    assert resolve(msgs, N)[0] == weaken(resolve(msgs, R)[0])


@given(st.lists(st.binary(max_size=4), max_size=5), st.sampled_from(list(ModelKind)), st.randoms())
def test_arbitration_ignores_device_order(msgs, model, rnd):
    shuffled = list(msgs)
    rnd.shuffle(shuffled)
    assert resolve(msgs, model) == resolve(shuffled, model)


def test_bad_action_rejected():
    with pytest.raises(PreconditionViolated):
        arbitrate(["talk"], S)


def test_model_parse_aliases():
    assert ModelKind.parse("StrongCD") is S
    assert ModelKind.parse("sender_cd") is C
    assert ModelKind.parse("NO-CD") is N
    with pytest.raises(ValueError):
        ModelKind.parse("half-cd")


# -- behavior loop -------------------------------------------------------------

class Idler:
    def __init__(self):
        self.done, self.output = False, None

    def act(self, slot, rng):
        return IDLE

    def receive(self, slot, signal):
        raise AssertionError("idle devices get no signal")


class Once:
    """Transmit (or listen) once, then stop."""

    def __init__(self, send: bool):
        self.send, self.done, self.output = send, False, None

    def act(self, slot, rng):
        return Transmit(b"hi") if self.send else LISTEN

    def receive(self, slot, signal):
        self.output, self.done = signal, True


class Coin:
    """Transmit with probability 1/2 for a few slots, recording signals."""

    def __init__(self):
        self.done, self.output = False, []

    def act(self, slot, rng):
        return Transmit(b"c") if rng.random() < 0.5 else LISTEN

    def receive(self, slot, signal):
        self.output.append(repr(signal))
        self.done = len(self.output) == 6


def test_idle_forever_hits_limit():
    with pytest.raises(SlotLimitExceeded) as info:
        run(lambda p: [Idler()], S, None, seed=1, slot_limit=10)
    tr = info.value.transcript
    assert tr.limit_exceeded and tr.max_energy == 0 and tr.slot_count == 10


def test_one_exchange():
    tr = run(lambda p: [Once(True), Once(False)], C, None, seed=0, slot_limit=5)
    assert tr.slot_count == 1
    assert list(tr.energies()) == [1, 1]
    assert tr.outputs[1] == Message(b"hi")


def test_same_seed_same_transcript():
    a = run(lambda p: [Coin() for _ in range(5)], R, None, seed=9, slot_limit=100)
    b = run(lambda p: [Coin() for _ in range(5)], R, None, seed=9, slot_limit=100)
    c = run(lambda p: [Coin() for _ in range(5)], R, None, seed=10, slot_limit=100)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_slot_limit_must_be_positive():
    with pytest.raises(PreconditionViolated):
        run(lambda p: [Idler()], S, None, seed=0, slot_limit=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32), st.sampled_from(list(ModelKind)))
def test_ledger_conservation(n, seed, model):
    tr = run(lambda p: [Coin() for _ in range(n)], model, None, seed=seed, slot_limit=100)
    for d in range(n):
        led = tr.ledger(d)
        assert led.transmits + led.listens + led.idles == 6  # each device lives 6 slots
        assert led.energy == 6
    assert tr.max_energy == max(tr.energies())


# -- channel ---------------------------------------------------------------------

def test_message_cap():
    ch = Channel(2, S, message_cap=4)
    ch.exchange({0: b"1234"}, {1})
    assert ch.max_message_bytes == 4
    with pytest.raises(MessageTooLarge):
        ch.exchange({0: b"12345"}, {1})


def test_terminated_device_cannot_act():
    ch = Channel(2, S)
    ch.terminate(0)
    with pytest.raises(PreconditionViolated):
        ch.exchange({0: b""}, {1})


def test_send_and_listen_exclusive():
    ch = Channel(2, S)
    with pytest.raises(PreconditionViolated):
        ch.exchange({0: b""}, {0, 1})


def test_idle_accounting_after_termination():
    ch = Channel(2, C)
    ch.exchange({0: b"a"}, {1})
    ch.terminate(1)
    ch.advance(3)
    tr = ch.transcript()
    assert tr.ledger(0).idles == 3 and tr.ledger(1).idles == 0


def test_streams_independent_of_order():
    a = derive_rng(5, 1, 2).random(4)
    derive_rng(5, 9).random(100)
    b = derive_rng(5, 1, 2).random(4)
    assert (a == b).all()
    assert not (derive_rng(5, 1, 3).random(4) == a).all()
