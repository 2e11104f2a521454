"""Slotted single-hop radio channel.

The kernel has two layers:

* ``arbitrate`` is the pure signal rule: given what every device does in one
  slot it returns what every device hears.
* ``Channel`` is a sparse, energy-metered slot clock.  Protocols hand it only
  the devices that act in a slot; everyone else idles for free, so empty
  stretches of a schedule cost O(1) via ``advance``.

``run`` drives per-device ``Behavior`` objects in lock step on top of a
``Channel`` and is the generic entry point for small, agent-level protocols.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import MessageTooLarge, PreconditionViolated, SlotLimitExceeded

DEFAULT_MESSAGE_CAP = 64 * 1024


class ModelKind(enum.Enum):
    STRONG_CD = "strong-cd"
    SENDER_CD = "sender-cd"
    RECEIVER_CD = "receiver-cd"
    NO_CD = "no-cd"

    @property
    def sender_feedback(self) -> bool:
        """Whether a transmitter learns anything about its own slot."""
        return self in (ModelKind.STRONG_CD, ModelKind.SENDER_CD)

    @property
    def listener_cd(self) -> bool:
        """Whether listeners can tell a collision from silence."""
        return self in (ModelKind.STRONG_CD, ModelKind.RECEIVER_CD)

    @classmethod
    def parse(cls, text: str) -> "ModelKind":
        key = text.strip().lower().replace("_", "-")
        for kind in cls:
            if kind.value == key or kind.name.lower().replace("_", "-") == key:
                return kind
        aliases = {"strongcd": cls.STRONG_CD, "sendercd": cls.SENDER_CD,
                   "receivercd": cls.RECEIVER_CD, "nocd": cls.NO_CD}
        if key.replace("-", "") in aliases:
            return aliases[key.replace("-", "")]
        raise ValueError(f"unknown collision-detection model {text!r}")


# -- actions and signals -----------------------------------------------------

class _Token:
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return self.name

    def __reduce__(self):
        return self.name


LISTEN = _Token("LISTEN")
IDLE = _Token("IDLE")
SILENCE = _Token("SILENCE")
NOISE = _Token("NOISE")


@dataclass(frozen=True, slots=True)
class Transmit:
    message: bytes


@dataclass(frozen=True, slots=True)
class Message:
    payload: bytes


def resolve(messages: Sequence[bytes], model: ModelKind):
    """Return ``(listener_signal, sender_signal)`` for one slot.

    Only the number of transmitters and, when it is one, the lone message
    matter, so the result never depends on device order.
    """
    count = len(messages)
    if count == 0:
        return SILENCE, None
    if count == 1:
        heard = Message(messages[0])
        return heard, (heard if model.sender_feedback else None)
    listener = NOISE if model.listener_cd else SILENCE
    if model is ModelKind.STRONG_CD:
        sender = NOISE
    elif model is ModelKind.SENDER_CD:
        sender = SILENCE
    else:
        sender = None
    return listener, sender


def arbitrate(actions: Sequence, model: ModelKind) -> list:
    """Map one action per device to one signal per device."""
    messages = [a.message for a in actions if type(a) is Transmit]
    listener, sender = resolve(messages, model)
    out = []
    for a in actions:
        if a is LISTEN:
            out.append(listener)
        elif type(a) is Transmit:
            out.append(sender)
        elif a is IDLE:
            out.append(None)
        else:
            raise PreconditionViolated(f"not an action: {a!r}")
    return out


# -- metering ----------------------------------------------------------------

@dataclass(frozen=True)
class EnergyLedger:
    transmits: int
    listens: int
    idles: int

    @property
    def energy(self) -> int:
        return self.transmits + self.listens


@dataclass(frozen=True)
class SlotRecord:
    """Everything that happened in one non-empty slot."""

    slot: int
    transmitters: tuple  # ((device, message), ...) sorted by device
    listeners: tuple     # sorted device indices
    listener_signal: object
    sender_signal: object

    def action_for(self, device: int):
        for d, m in self.transmitters:
            if d == device:
                return Transmit(m)
        return LISTEN if device in self.listeners else IDLE

    def signal_for(self, device: int):
        if any(d == device for d, _ in self.transmitters):
            return self.sender_signal
        return self.listener_signal if device in self.listeners else None


@dataclass
class Transcript:
    model: ModelKind
    slot_count: int
    transmits: list
    listens: list
    idles: list
    max_message_bytes: int
    records: list | None = None
    limit_exceeded: bool = False
    outputs: list | None = None

    @property
    def n_devices(self) -> int:
        return len(self.transmits)

    def energies(self) -> np.ndarray:
        return np.asarray(self.transmits, dtype=np.int64) + np.asarray(self.listens, dtype=np.int64)

    @property
    def max_energy(self) -> int:
        return int(self.energies().max()) if self.transmits else 0

    @property
    def avg_energy(self) -> float:
        return float(self.energies().mean()) if self.transmits else 0.0

    def ledger(self, device: int) -> EnergyLedger:
        return EnergyLedger(self.transmits[device], self.listens[device], self.idles[device])

    def digest(self) -> str:
        """SHA-256 over a canonical serialization, for bit-identity checks."""
        h = hashlib.sha256()
        h.update(self.model.value.encode())
        h.update(struct.pack("<qq?", self.slot_count, self.max_message_bytes, self.limit_exceeded))
        for seq in (self.transmits, self.listens, self.idles):
            h.update(np.asarray(seq, dtype=np.int64).tobytes())
        for rec in self.records or ():
            h.update(struct.pack("<q", rec.slot))
            for d, m in rec.transmitters:
                h.update(struct.pack("<qq", d, len(m)))
                h.update(m)
            h.update(np.asarray(rec.listeners, dtype=np.int64).tobytes())
            h.update(_signal_bytes(rec.listener_signal))
            h.update(_signal_bytes(rec.sender_signal))
        if self.outputs is not None:
            h.update(repr(self.outputs).encode())
        return h.hexdigest()


def _signal_bytes(sig) -> bytes:
    if sig is None:
        return b"\x00"
    if sig is SILENCE:
        return b"\x01"
    if sig is NOISE:
        return b"\x02"
    return b"\x03" + struct.pack("<q", len(sig.payload)) + sig.payload


class Channel:
    """Sparse slot clock with per-device energy ledgers.

    Devices are dense indices ``0..n_devices-1``.  A device that is not named
    in a slot idles.  ``terminate`` freezes a device's ledger; naming it again
    afterwards is a protocol bug and raises.
    """

    def __init__(self, n_devices: int, model: ModelKind, *,
                 message_cap: int | None = DEFAULT_MESSAGE_CAP, record: bool = False):
        self.model = model
        self.n_devices = n_devices
        self.message_cap = message_cap
        self.slot = 0
        self.transmits = [0] * n_devices
        self.listens = [0] * n_devices
        self.max_message_bytes = 0
        self._ended_at: dict[int, int] = {}
        self.records: list | None = [] if record else None

    # one slot in which ``senders`` transmit and ``listeners`` listen
    def exchange(self, senders: Mapping[int, bytes], listeners: Iterable[int] = ()):
        ended = self._ended_at
        listeners = listeners if isinstance(listeners, (set, frozenset)) else set(listeners)
        if ended:
            for d in senders:
                if d in ended:
                    raise PreconditionViolated(f"terminated device {d} transmitted")
            for d in listeners:
                if d in ended:
                    raise PreconditionViolated(f"terminated device {d} listened")
        if senders and not listeners.isdisjoint(senders):
            raise PreconditionViolated("a device cannot transmit and listen in one slot")
        msgs = list(senders.values())
        tx = self.transmits
        for d, m in senders.items():
            tx[d] += 1
            size = len(m)
            if size > self.max_message_bytes:
                if self.message_cap is not None and size > self.message_cap:
                    raise MessageTooLarge(f"{size} bytes exceeds cap {self.message_cap}")
                self.max_message_bytes = size
        rx = self.listens
        for d in listeners:
            rx[d] += 1
        listener_sig, sender_sig = resolve(msgs, self.model)
        if self.records is not None and (senders or listeners):
            self.records.append(SlotRecord(
                self.slot, tuple(sorted(senders.items())), tuple(sorted(listeners)),
                listener_sig, sender_sig))
        self.slot += 1
        return listener_sig, sender_sig

    def step(self, actions: Mapping[int, object]) -> dict:
        """Resolve one slot given explicit per-device actions."""
        senders, listeners = {}, set()
        for d, a in actions.items():
            if a is LISTEN:
                listeners.add(d)
            elif type(a) is Transmit:
                senders[d] = a.message
            elif a is not IDLE:
                raise PreconditionViolated(f"not an action: {a!r}")
        lsig, ssig = self.exchange(senders, listeners)
        out = {d: None for d in actions}
        for d in listeners:
            out[d] = lsig
        for d in senders:
            out[d] = ssig
        return out

    def advance(self, k: int) -> None:
        """Let ``k`` slots pass in which nobody acts."""
        if k < 0:
            raise ValueError("cannot rewind the slot clock")
        self.slot += k

    def terminate(self, device: int) -> None:
        self._ended_at.setdefault(device, self.slot)

    def is_live(self, device: int) -> bool:
        return device not in self._ended_at

    def energy(self, device: int) -> int:
        return self.transmits[device] + self.listens[device]

    def transcript(self, *, limit_exceeded: bool = False, outputs=None) -> Transcript:
        idles = []
        for d in range(self.n_devices):
            live = self._ended_at.get(d, self.slot)
            idles.append(live - self.transmits[d] - self.listens[d])
        return Transcript(self.model, self.slot, list(self.transmits), list(self.listens), idles,
                          self.max_message_bytes, self.records, limit_exceeded, outputs)


# -- randomness --------------------------------------------------------------

def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *path)``.

    Philox keyed through SeedSequence gives independent streams for any
    path, so results never depend on which worker ran which trial.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(p) for p in path]])
    return np.random.Generator(np.random.Philox(ss))


class SlotRng:
    """Lazily built generator for one (seed, device, slot) triple."""

    __slots__ = ("_key", "_gen")

    def __init__(self, seed: int, device: int, slot: int):
        self._key = (seed, device, slot)
        self._gen = None

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = derive_rng(*self._key)
        return self._gen

    def random(self) -> float:
        return float(self.generator.random())

    def integers(self, low: int, high: int) -> int:
        return int(self.generator.integers(low, high))


# -- behavior-driven execution ----------------------------------------------

class Behavior(Protocol):
    done: bool
    output: object

    def act(self, slot: int, rng: SlotRng): ...

    def receive(self, slot: int, signal) -> None: ...


def run(protocol: Callable[[object], Sequence[Behavior]], model: ModelKind, params, seed: int,
        slot_limit: int, *, record: bool = True, raise_on_limit: bool = True,
        message_cap: int | None = DEFAULT_MESSAGE_CAP) -> Transcript:
    """Execute one behavior per device in lock step until all are done.

    ``protocol(params)`` returns the behaviors; index ``i`` is device ``i``.
    A behavior only ever sees its own state, its slot rng and its signal.
    """
    if slot_limit <= 0:
        raise PreconditionViolated("slot_limit must be positive")
    devices = list(protocol(params))
    ch = Channel(len(devices), model, message_cap=message_cap, record=record)
    for i, b in enumerate(devices):
        if b.done:
            ch.terminate(i)
    live = [i for i, b in enumerate(devices) if not b.done]
    exceeded = False
    while live:
        if ch.slot >= slot_limit:
            exceeded = True
            break
        t = ch.slot
        actions = {i: devices[i].act(t, SlotRng(seed, i, t)) for i in live}
        signals = ch.step(actions)
        for i in live:
            if actions[i] is not IDLE:
                devices[i].receive(t, signals[i])
        still = []
        for i in live:
            if devices[i].done:
                ch.terminate(i)
            else:
                still.append(i)
        live = still
    tr = ch.transcript(limit_exceeded=exceeded, outputs=[b.output for b in devices])
    if exceeded and raise_on_limit:
        raise SlotLimitExceeded(f"slot limit {slot_limit} reached", tr)
    return tr
