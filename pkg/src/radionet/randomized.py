"""Randomized approximate counting and leader election.

Devices in these protocols are exchangeable: in every slot only the number
of transmitters matters, and when exactly one device transmits it is a
uniformly random member of the cohort that could have.  The simulation
therefore draws per-slot transmitter counts (binomial or multinomial) and
then the identities of the transmitters, which has the same distribution
as flipping one coin per device.  This lets the same code handle simulated
populations far beyond what fits in memory (n up to 2^62).

Every stage also runs for a fixed number of slots that depends only on
public parameters, so all devices keep a common clock.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ModelKind, derive_rng
from .dense import DenseConfig, dense_census, dense_census_slot_bound
from .errors import (InvalidSchedule, LeaderGroupTooSmall, ModelUnsupported, NTooSmall,
                     NoActiveDevices, PreconditionViolated)

D_INF = 2 ** 62          # schedule values at or above this act as infinity
SCHEDULE_KINDS = ("geometric", "polynomial", "exponential", "double_exp")
MIN_D1 = 14
C_ID = 40                # N = ceil(C_ID * log2(n_tilde)) slots per ID assignment
BETA = 5                 # devices holding this many IDs abstain
C_DENSITY = 0.325
TRIVIAL_PAIRS = 64       # slot pairs per scale in trivial_algorithm
SOLO_SLOTS = 64          # ReceiverCD test for n = 1
MATERIALIZE_LIMIT = 2 ** 20
CHECKPOINT_MESSAGE_BYTES = 8   # a leader announces its label k as a u64
ANON_CAP = 4096          # busier slots of unlisted cohorts keep anonymous senders


# -- checkpoint schedules ----------------------------------------------------

@dataclass
class CheckpointSchedule:
    """Checkpoints d_1 < d_2 < ..., evaluated lazily and memoized.

    ``gamma`` is the growth ratio every consecutive pair must meet; it is
    also the multiplier of the geometric kind.
    """

    kind: str
    d1: int = MIN_D1
    gamma: float = 2.0
    eps: float = 1.0
    base: float = 2.0
    _memo: list = field(default_factory=list, repr=False, compare=False)

    def d(self, i: int) -> int:
        """d_i for i >= 1, with d_0 = 0."""
        if i <= 0:
            return 0
        if not self._memo:
            self._memo.append(self.d1)
        while len(self._memo) < i:
            self._memo.append(self._next(self._memo[-1]))
        return self._memo[i - 1]

    def _next(self, prev: int) -> int:
        if prev >= D_INF:
            return D_INF
        if self.kind == "geometric":
            v = math.ceil(self.gamma * prev)
        elif self.kind == "polynomial":
            a = 1 + self.eps / 2
            if a.is_integer():
                v = prev ** int(a)
            else:
                e = a * math.log2(prev)
                v = D_INF if e >= 62 else math.ceil(2.0 ** e)
        elif self.kind == "exponential":
            e = prev * math.log2(self.base)
            v = D_INF if e >= 62 else math.ceil(self.base ** prev)
        else:
            e = math.log2(prev) ** self.eps
            v = D_INF if e >= math.log2(62) else math.ceil(2.0 ** (2.0 ** e))
        return min(v, D_INF)

    def index_of(self, k: int) -> int | None:
        """i with d_i = k, if k is a checkpoint."""
        i = 1
        while self.d(i) < k:
            i += 1
        return i if self.d(i) == k else None

    def i_hat(self, log_n: float) -> int:
        """Least i >= 1 with log n <= d_i."""
        i = 1
        while self.d(i) < log_n:
            i += 1
        return i


def make_schedule(kind: str, d1: int = MIN_D1, *, gamma: float | None = None,
                  eps: float | None = None, base: float | None = None) -> CheckpointSchedule:
    """Build and validate a checkpoint schedule.

    ``gamma`` defaults to 2 for the geometric kind and to 1.5 as the
    minimum growth ratio of the others.
    """
    if kind not in SCHEDULE_KINDS:
        raise InvalidSchedule(f"unknown schedule kind {kind!r}")
    if int(d1) != d1 or d1 < MIN_D1:
        raise InvalidSchedule(f"d_1 = {d1} < {MIN_D1} breaks 2^(d_1/2) >= 100")
    g = gamma if gamma is not None else (2.0 if kind == "geometric" else 1.5)
    if not g > 1:
        raise InvalidSchedule(f"gamma = {g} must exceed 1")
    sched = CheckpointSchedule(kind, int(d1), float(g))
    if kind == "polynomial":
        sched.eps = 1.0 if eps is None else float(eps)
        if sched.eps <= 0:
            raise InvalidSchedule("polynomial schedule needs eps > 0")
    elif kind == "exponential":
        sched.base = 2.0 if base is None else float(base)
        if sched.base <= 1:
            raise InvalidSchedule("exponential schedule needs base > 1")
    elif kind == "double_exp":
        sched.eps = 0.6 if eps is None else float(eps)
        if not 0 < sched.eps < 1:
            raise InvalidSchedule("double_exp schedule needs 0 < eps < 1")
    i = 1
    while sched.d(i) < D_INF and i < 256:
        nxt = sched.d(i + 1)
        if nxt < D_INF and nxt < g * sched.d(i):
            raise InvalidSchedule(
                f"d_{i + 1} = {nxt} is below {g} * d_{i} = {g * sched.d(i)}")
        i += 1
    return sched


# -- labels ------------------------------------------------------------------

_R = 2.0 ** -0.5


def label_mass(d1: int) -> float:
    """Probability that a device gets any label: sum over k >= d1 of 2^(-k/2)."""
    return 2.0 ** (-d1 / 2) / (1 - _R)


def label_from_u(u: float, d1: int) -> int | None:
    """Walk the intervals [S_{k-1}, S_k) of length 2^(-k/2) one by one."""
    if u >= label_mass(d1):
        return None
    acc = 0.0
    for k in range(d1, d1 + 4096):
        w = 2.0 ** (-k / 2)
        if u < acc + w:
            return k
        acc += w
    return None


def labels_from_u(u: np.ndarray, d1: int) -> np.ndarray:
    """Vectorized ``label_from_u``; -1 stands for no label."""
    u = np.asarray(u, dtype=np.float64)
    head = 2.0 ** (-d1 / 2)
    inside = u < label_mass(d1)

    def prefix(m):  # mass of labels d1 .. d1+m
        return head * (1 - _R ** (m + 1)) / (1 - _R)

    arg = np.where(inside, 1 - u * (1 - _R) / head, 1.0)
    m = np.floor(np.log(np.maximum(arg, 1e-300)) / math.log(_R)).astype(np.int64)
    m = np.maximum(m, 0)
    # repair floating point slips at interval borders
    m = np.where(inside & (u >= prefix(m)), m + 1, m)
    m = np.where(inside & (m > 0) & (u < prefix(m - 1)), m - 1, m)
    return np.where(inside, d1 + m, -1)


def draw_label(rng: np.random.Generator, d1: int = MIN_D1) -> int | None:
    return label_from_u(float(rng.random()), d1)


def draw_labels(rng: np.random.Generator, size: int, d1: int = MIN_D1) -> np.ndarray:
    return labels_from_u(rng.random(size), d1)


class LabelCounts:
    """Number of devices per label for a population too large to list.

    Counts are drawn in label order as conditional binomials, which gives
    the exact multinomial law of independent per-device draws.
    """

    def __init__(self, rng: np.random.Generator, n: int, d1: int = MIN_D1):
        self._rng = rng
        self._d1 = d1
        self._left = n
        self._mass = 1.0
        self._counts: list = []

    def __call__(self, k: int) -> int:
        while len(self._counts) <= k - self._d1:
            w = 2.0 ** (-(self._d1 + len(self._counts)) / 2)
            c = 0
            if self._left > 0 and self._mass > 0:
                c = int(self._rng.binomial(self._left, min(1.0, w / self._mass)))
            self._counts.append(c)
            self._left -= c
            self._mass -= w
        return self._counts[k - self._d1] if k >= self._d1 else 0


# -- energy bookkeeping ------------------------------------------------------

@dataclass(frozen=True)
class EnergySummary:
    max_energy: int
    mean_energy: float
    exact: bool


class _Tally:
    """Per-device energy.

    With a listed population every device has its own counter.  Otherwise
    each phase reports its own maximum and the summary adds them up, which
    is an upper bound (``exact`` is then False).
    """

    def __init__(self, n: int, listed: bool):
        self.n = n
        self.base = 0
        self.arr = np.zeros(n, dtype=np.int64) if listed else None
        self.bound = 0
        self.extra_sum = 0

    def everyone(self, e: int) -> None:
        self.base += e

    def phase(self, keys, energies, hidden: int = 0) -> None:
        """Charge ``energies[t]`` to device ``keys[t]``.

        ``hidden`` bounds the energy of devices the phase did not name.
        """
        keys = np.asarray(keys, dtype=np.int64)
        energies = np.asarray(energies, dtype=np.int64)
        top = 0
        if keys.size:
            self.extra_sum += int(energies.sum())
            if self.arr is not None:
                np.add.at(self.arr, keys, energies)
            else:
                _, inv = np.unique(keys, return_inverse=True)
                top = int(np.bincount(inv, weights=energies).max())
        if self.arr is None:
            self.bound += top + hidden

    def summary(self) -> EnergySummary:
        if self.arr is not None:
            top = int(self.arr.max()) if self.n else 0
            return EnergySummary(self.base + top, self.base + self.extra_sum / max(self.n, 1), True)
        return EnergySummary(self.base + self.bound, self.base + self.extra_sum / max(self.n, 1), False)


def _distinct(rng: np.random.Generator, m: int, c: int) -> np.ndarray:
    """``c`` distinct uniform indices from range(m)."""
    if m <= 2 ** 31:
        return rng.choice(m, size=c, replace=False).astype(np.int64)
    while True:
        got = rng.integers(0, m, size=c, dtype=np.int64)
        if np.unique(got).size == c:
            return got


def _who(rng: np.random.Generator, m: int, counts: np.ndarray, cap: int | None = None) -> list:
    """Identities of the transmitters behind each per-slot count.

    Slots with more than ``cap`` transmitters stay anonymous (None, like
    empty slots); no protocol decision depends on who they were.
    """
    out = [None] * len(counts)
    ones = np.flatnonzero(counts == 1)
    if ones.size:
        picks = rng.integers(0, m, size=ones.size, dtype=np.int64)
        for s, d in zip(ones.tolist(), picks.tolist()):
            out[s] = np.array([d], dtype=np.int64)
    many = counts > 1 if cap is None else (counts > 1) & (counts <= cap)
    for s in np.flatnonzero(many).tolist():
        out[s] = _distinct(rng, m, int(counts[s]))
    return out


def _max_binomial(rng: np.random.Generator, m: int, trials: int, p: float) -> int:
    """One draw of the maximum of ``m`` independent Binomial(trials, p)."""
    if m <= 0 or trials <= 0 or p <= 0:
        return 0
    t = np.arange(trials + 1)
    logpmf = np.array([math.lgamma(trials + 1) - math.lgamma(k + 1) - math.lgamma(trials - k + 1)
                       for k in range(trials + 1)]) + t * math.log(p) + (trials - t) * math.log1p(-p)
    pmf = np.exp(logpmf)
    sf = np.concatenate([np.cumsum(pmf[::-1])[::-1][1:], [0.0]])   # Pr[X > t]
    log_u = math.log(max(rng.random(), 1e-300))
    with np.errstate(divide="ignore"):
        ok = m * np.log1p(-np.minimum(sf, 1 - 1e-16)) >= log_u
    return int(np.argmax(ok))


# -- Trivial-Algorithm -------------------------------------------------------

@dataclass
class TrivialResult:
    exceeds: bool
    estimate: int | None
    slots: int
    agreed: bool
    pairs_hit: tuple
    energy: EnergySummary | None = None


def _pair_prob(g: np.ndarray, p: float) -> np.ndarray:
    """Pr[both slots of a pair have one transmitter] for ``g`` devices."""
    g = np.asarray(g, dtype=np.float64)
    if p >= 0.5:
        return np.where(g == 2, 0.5, 0.0)
    with np.errstate(divide="ignore"):
        lg = np.log(g) + np.log(np.maximum(g - 1, 1e-300)) + 2 * math.log(p) + (g - 2) * math.log1p(-2 * p)
    return np.where(g >= 2, np.exp(lg), 0.0)


def _fit(hits: list, pairs: int, top: int) -> float:
    """Maximum-likelihood population size for the per-scale hit counts."""
    grid = np.concatenate([np.arange(2, 65, dtype=np.float64),
                           2.0 ** (np.arange(49, 8 * top + 1) / 8)])
    z = np.asarray(hits, dtype=np.float64)
    ll = np.zeros_like(grid)
    for j, zj in enumerate(z, start=1):
        q = np.clip(_pair_prob(grid, 2.0 ** -j), 1e-300, 1 - 1e-12)
        ll += zj * np.log(q) + (pairs - zj) * np.log1p(-q)
    return float(grid[int(np.argmax(ll))])


def _solo(n: int, model: ModelKind, rng: np.random.Generator, tally: _Tally):
    """Detect n = 1.  Returns (alone, agreed, slots)."""
    if model.sender_feedback:
        # everyone transmits once; a lone sender hears its own message
        tally.everyone(1)
        return n == 1, True, 1
    if model is ModelKind.NO_CD:
        if n < 2:
            raise PreconditionViolated("NoCD needs at least two devices")
        return False, True, 0
    # ReceiverCD: transmit or listen with probability 1/2 per slot; a device
    # that never hears anything concludes it is alone
    tally.everyone(SOLO_SLOTS)
    if n == 1:
        return True, True, SOLO_SLOTS
    false_alone = False
    if n <= 4096:
        tx = rng.random((SOLO_SLOTS, n)) < 0.5
        busy_other = (tx.sum(axis=1, keepdims=True) - tx) > 0
        heard = (~tx) & busy_other
        false_alone = bool((~heard.any(axis=0)).any())
    # for larger n one device stays deaf with probability below n * 2^-63
    return False, not false_alone, SOLO_SLOTS


def _trivial(n: int, d: int, model: ModelKind, rng: np.random.Generator, tally: _Tally,
             pairs: int = TRIVIAL_PAIRS) -> TrivialResult:
    if d < 2:
        raise PreconditionViolated("trivial_algorithm needs d >= 2")
    if n < 1:
        raise NoActiveDevices("no devices")
    alone, agreed, slots = _solo(n, model, rng, tally)
    top = math.ceil(math.log2(d)) + 2
    per_pair = 2 if model.sender_feedback else 4
    total = slots + top * pairs * per_pair
    if alone:
        return TrivialResult(False, 1, total, True, ())
    # each pair: a device transmits in the first slot with probability p,
    # in the second with probability p, and listens to the other slot
    tally.everyone(2 * top * pairs)
    hits = []
    keys, extra = [], []
    hidden = 0
    for j in range(1, top + 1):
        p = 2.0 ** -j
        c = rng.multinomial(n, [p, p, 1 - 2 * p], size=pairs)
        both = (c[:, 0] == 1) & (c[:, 1] == 1)
        hits.append(int(both.sum()))
        if model.sender_feedback:
            continue
        # echo slots t1/t2: first-slot senders that heard a lone second
        # slot speak at t1 and listen at t2; second-slot senders that heard
        # a lone first slot listen at t1 and answer at t2 if they got it
        for row in np.flatnonzero(((c[:, 1] == 1) & (c[:, 0] >= 1)) | ((c[:, 0] == 1) & (c[:, 1] >= 1))):
            c0, c1 = int(c[row, 0]), int(c[row, 1])
            if tally.arr is None and c0 + c1 > ANON_CAP:
                hidden += 2
                continue
            who = _distinct(rng, n, c0 + c1)
            if c1 == 1:
                keys.extend(who[:c0].tolist())
                extra.extend([2] * c0)
            if c0 == 1:
                keys.extend(who[c0:].tolist())
                extra.extend([2 if c1 == 1 else 1] * c1)
    tally.phase(keys, extra, hidden)
    if sum(hits) == 0:
        return TrivialResult(True, None, total, agreed, tuple(hits))
    g = _fit(hits, pairs, top + 3)
    if g >= 2 ** (top - 1):
        return TrivialResult(True, None, total, agreed, tuple(hits))
    return TrivialResult(False, int(round(g)), total, agreed, tuple(hits))


def trivial_algorithm(n: int, d: int, model: ModelKind = ModelKind.SENDER_CD, *,
                      seed: int = 0, pairs: int = TRIVIAL_PAIRS) -> TrivialResult:
    """Decide n > d or estimate n within a factor of two.

    Scales j = 1 .. ceil(log2 d) + 2 each run ``pairs`` slot pairs with
    transmission probability 2^-j per slot.  The number of pairs in which
    both slots carried exactly one message is known to every device, and
    all devices fit n to those counts by maximum likelihood.
    """
    listed = n <= MATERIALIZE_LIMIT
    tally = _Tally(n, listed)
    res = _trivial(n, d, model, derive_rng(seed, 2), tally, pairs)
    res.energy = tally.summary()
    return res


# -- Test(i) and Exponential-Search ------------------------------------------

def _need_listener_cd(model: ModelKind) -> None:
    if not model.listener_cd:
        raise ModelUnsupported(f"Test(i) needs listener collision detection, not {model.value}")


def probe_verdict(transmitters: int) -> bool:
    """Common verdict of one Test(i) slot: True means i >= i_hat.

    Transmitters always decide i < i_hat; listeners decide i >= i_hat only
    on silence, so the verdict is uniform across devices.
    """
    return transmitters == 0


@dataclass(frozen=True)
class ProbeResult:
    transmitters: int
    at_least: bool   # every device concluded i >= i_hat
    slots: int = 1


def _probe(n: int, di: int, rng: np.random.Generator) -> ProbeResult:
    p = 0.0 if di >= 1074 else 2.0 ** -di
    x = int(rng.binomial(n, p)) if p > 0 else 0
    return ProbeResult(x, probe_verdict(x))


def probe_test(n: int, i: int, schedule: CheckpointSchedule,
               model: ModelKind = ModelKind.STRONG_CD, *, seed: int = 0) -> ProbeResult:
    """One slot: every device transmits with probability 2^-d_i."""
    _need_listener_cd(model)
    return _probe(n, schedule.d(i), derive_rng(seed, 3))


@dataclass(frozen=True)
class SearchResult:
    i_tilde: int
    tests: int

    @property
    def slots(self) -> int:
        return self.tests


def _search(n: int, schedule: CheckpointSchedule, rng: np.random.Generator) -> SearchResult:
    tests = 0

    def test(i):
        nonlocal tests
        tests += 1
        return _probe(n, schedule.d(i), rng).at_least

    i = 1
    while not test(i):
        i *= 2
    lo, hi = (i // 2 + 1 if i > 1 else 1), i
    while lo < hi:
        mid = (lo + hi) // 2
        if test(mid):
            hi = mid
        else:
            lo = mid + 1
    return SearchResult(lo, tests)


def exponential_search(n: int, schedule: CheckpointSchedule,
                       model: ModelKind = ModelKind.STRONG_CD, *, seed: int = 0) -> SearchResult:
    """Doubling over i = 1, 2, 4, ... then binary search on the last range."""
    _need_listener_cd(model)
    if n < 1:
        raise NoActiveDevices("no devices")
    return _search(n, schedule, derive_rng(seed, 3))


# -- Test-Network-Size -------------------------------------------------------

@dataclass
class IdAssignment:
    n_ids: int
    owners: np.ndarray    # owner per ID, -1 if vacant
    slots: int
    devices: np.ndarray   # devices that spent energy
    energy: np.ndarray    # their energy, aligned with ``devices``
    hidden: int = 0       # energy bound for anonymous senders

    @property
    def assigned(self) -> int:
        return int((self.owners >= 0).sum())


def id_count(n_tilde: float, c_id: float = C_ID) -> int:
    if n_tilde < 100:
        raise NTooSmall(f"n_tilde = {n_tilde} < 100")
    return math.ceil(c_id * math.log2(n_tilde))


def _assign(m: int, n_tilde: float, model: ModelKind, rng: np.random.Generator,
            c_id: float = C_ID) -> IdAssignment:
    big_n = id_count(n_tilde, c_id)
    p = 1.0 / n_tilde
    cap = ANON_CAP if m > MATERIALIZE_LIMIT else None
    owners = np.full(big_n, -1, dtype=np.int64)
    if model.sender_feedback:
        slots = big_n
        counts = rng.binomial(m, p, size=big_n) if m else np.zeros(big_n, dtype=np.int64)
        who = _who(rng, m, counts, cap)
        keys = [w for w in who if w is not None]
        for s in np.flatnonzero(counts == 1).tolist():
            owners[s] = who[s][0]
        flat = np.concatenate(keys) if keys else np.zeros(0, dtype=np.int64)
        devs, energy = np.unique(flat, return_counts=True)
        anon = int(((counts > 0) & np.array([w is None for w in who])).sum())
        return IdAssignment(big_n, owners, slots, devs, energy, _max_binomial(rng, m, anon, p))
    # paired slots 2i, 2i+1 followed by echo slots t1, t2
    slots = 4 * big_n
    counts = rng.binomial(m, p, size=2 * big_n) if m else np.zeros(2 * big_n, dtype=np.int64)
    who = _who(rng, m, counts, cap)
    keys, energy = [], []
    anon = 0
    for i in range(big_n):
        a, b = who[2 * i], who[2 * i + 1]
        ca, cb = int(counts[2 * i]), int(counts[2 * i + 1])
        if ca == 0 and cb == 0:
            continue
        if (a is None and ca) or (b is None and cb):
            # a crowded slot: no ID, and named senders only transmit and
            # listen (a device in both slots skips the listen)
            anon += (a is None and ca > 0) + (b is None and cb > 0)
            for side, other in ((a, cb), (b, ca)):
                if side is not None:
                    inside = rng.random(side.size) < other / m
                    keys.extend(side.tolist())
                    energy.extend((2 - inside).tolist())
            continue
        a = a.tolist() if a is not None else []
        b = b.tolist() if b is not None else []
        only_a = [d for d in a if d not in b]
        only_b = [d for d in b if d not in a]
        # transmissions, plus a listen on the other slot of the pair
        keys.extend(a)
        keys.extend(b)
        keys.extend(only_a)
        keys.extend(only_b)
        energy.extend([1] * (len(a) + len(b) + len(only_a) + len(only_b)))
        lone_b = len(b) == 1 and len(only_b) == 1
        lone_a = len(a) == 1 and len(only_a) == 1
        if len(b) == 1:
            # first-slot senders that heard the lone second slot speak at t1
            # and listen at t2
            keys.extend(only_a)
            energy.extend([2] * len(only_a))
        if len(a) == 1 and only_b:
            # the second-slot sender heard the lone first slot: listen at t1,
            # answer at t2 if exactly one first-slot sender spoke
            keys.extend(only_b)
            energy.extend([2 if len(only_a) == 1 and len(b) == 1 else 1] * len(only_b))
        if lone_a and lone_b:
            owners[i] = a[0]
    devs = np.asarray(keys, dtype=np.int64)
    if devs.size:
        devs, inv = np.unique(devs, return_inverse=True)
        e = np.bincount(inv, weights=np.asarray(energy, dtype=np.int64)).astype(np.int64)
    else:
        e = np.zeros(0, dtype=np.int64)
    # an anonymous sender spends at most 4 per slot: transmit, listen, t1, t2
    return IdAssignment(big_n, owners, slots, devs, e, 4 * _max_binomial(rng, m, anon, p))


def assign_ids(m: int, n_tilde: float, model: ModelKind = ModelKind.STRONG_CD, *,
               seed: int = 0, c_id: float = C_ID) -> IdAssignment:
    """Hand out IDs 0..N-1 to ``m`` participants that each guess n_tilde.

    With sender feedback a device that hears its own message in slot i
    takes ID i.  Without it, ID i needs exactly one transmitter in each of
    slots 2i and 2i+1; the echo slots t1/t2 let the first-slot sender learn
    that, and it takes the ID.
    """
    return _assign(m, n_tilde, model, derive_rng(seed, 4), c_id)


@dataclass
class TNSResult:
    leader: int | None          # participant index of the leader
    leader_id: int | None
    collected: int
    n_ids: int
    participants: int           # IDs held by non-abstaining devices
    slots: int
    resigned: bool = False
    hidden: int = 0
    devices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    energy: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    max_message_bytes: int = 0


def tns_config(n_ids: int, model: ModelKind, c: float = C_DENSITY) -> DenseConfig:
    """Dense census settings for an ID space of ``n_ids``."""
    c_eff = c if model.sender_feedback else c * c
    return DenseConfig(c=c_eff, part_size=n_ids, j=2, collect_part=math.ceil(4 / c_eff),
                       relaxed=True)


def tns_slots(n_tilde: float, model: ModelKind, c_id: float = C_ID, c: float = C_DENSITY) -> int:
    big_n = id_count(n_tilde, c_id)
    assign = big_n if model.sender_feedback else 4 * big_n
    return assign + dense_census_slot_bound(big_n, tns_config(big_n, model, c))


def _tns(m: int, n_tilde: float, model: ModelKind, rng: np.random.Generator, *,
         c_id: float = C_ID, beta: int = BETA, c: float = C_DENSITY) -> TNSResult:
    ids = _assign(m, n_tilde, model, rng, c_id)
    big_n = ids.n_ids
    budget = tns_slots(n_tilde, model, c_id, c)
    owners = ids.owners.copy()
    held = owners[owners >= 0]
    if held.size:
        devs, cnt = np.unique(held, return_counts=True)
        owners[np.isin(owners, devs[cnt >= beta])] = -1
    active = np.flatnonzero(owners >= 0)
    res = TNSResult(None, None, 0, big_n, int(active.size), budget, hidden=ids.hidden,
                    devices=ids.devices, energy=ids.energy)
    if active.size == 0:
        return res
    cfg = tns_config(big_n, model, c)
    try:
        census = dense_census(big_n, active.tolist(), config=cfg, model=model)
    except LeaderGroupTooSmall:
        return res
    # virtual devices (IDs) charge their holder
    e_ids = census.transcript.energies()
    holders = owners[np.asarray(census.ids, dtype=np.int64)]
    devs = np.concatenate([ids.devices, holders])
    energy = np.concatenate([ids.energy, e_ids])
    devs, inv = np.unique(devs, return_inverse=True)
    res.devices = devs
    res.energy = np.bincount(inv, weights=energy).astype(np.int64)
    res.collected = len(census.census)
    res.max_message_bytes = census.transcript.max_message_bytes
    if res.collected < cfg.c * big_n:
        res.resigned = True
        return res
    res.leader_id = int(census.leader_id)
    res.leader = int(owners[census.leader_id])
    return res


def test_network_size(m: int, n_tilde: float, model: ModelKind = ModelKind.STRONG_CD, *,
                      seed: int = 0, c_id: float = C_ID, beta: int = BETA,
                      c: float = C_DENSITY) -> TNSResult:
    """Elect a leader among ``m`` participants iff n_tilde is close to m.

    IDs come from ``assign_ids``; devices holding ``beta`` or more IDs
    abstain, and the rest run a dense census over the ID space.  The
    census leader resigns if it collected fewer than c*N IDs (c squared
    without sender feedback).
    """
    return _tns(m, n_tilde, model, derive_rng(seed, 4), c_id=c_id, beta=beta, c=c)


test_network_size.__test__ = False  # keep pytest from collecting it


# -- Estimate-Network-Size ---------------------------------------------------

@dataclass
class CountConfig:
    c_id: float = C_ID
    beta: int = BETA
    c: float = C_DENSITY
    trivial_pairs: int = TRIVIAL_PAIRS
    materialize_limit: int = MATERIALIZE_LIMIT
    slot_limit: int | None = None   # default 64 * d_{i_hat + 2}^2


@dataclass
class CountResult:
    estimate: int | None
    decided_by: str                 # "trivial", "checkpoint" or "failed"
    checkpoint_index: int | None
    k_final: int | None
    agreed: bool
    slots: int
    checkpoint_listens: int         # listens of a non-leader device in checkpoint slots
    checkpoints: int
    es_tests: int
    i_tilde: int | None
    energy: EnergySummary
    limit_exceeded: bool = False
    path: list = field(default_factory=list)
    max_message_bytes: int = 0

    def success(self, n: int) -> bool:
        return self.agreed and self.estimate is not None and n / 2 <= self.estimate <= 2 * n


@dataclass
class _Leader:
    k: int
    key: int


def _checkpoint(leaders: list, model: ModelKind):
    """Odd-label leaders announce in slot A, even-label ones in slot B.

    Returns (k or None, agreed, listens of a non-leader, extra energy per
    leader key).  Even leaders speak in B only if A was not a lone message.
    """
    odd = [ld for ld in leaders if ld.k % 2 == 1]
    even = [ld for ld in leaders if ld.k % 2 == 0]
    extra = {}
    if len(odd) == 1:
        # lone message in A; listeners stop after A
        if not model.sender_feedback:
            extra[odd[0].key] = 1  # it listens in B to learn the outcome
        return odd[0].k, True, 1, extra
    # A was silent or a collision; even leaders transmit in B
    agreed = True
    if len(even) == 1:
        return even[0].k, True, 2, extra
    if odd and not model.sender_feedback:
        # an odd leader hears nothing lone in B; silence looks like success
        # unless listeners can detect the collision of several even leaders
        if not (model.listener_cd and len(even) >= 2):
            agreed = False
    if len(even) >= 2 and not model.sender_feedback:
        agreed = False  # even leaders cannot tell their collision apart
    return None, agreed, 2, extra


def estimate_network_size(n: int, schedule: CheckpointSchedule,
                          model: ModelKind = ModelKind.SENDER_CD, *, seed: int = 0,
                          config: CountConfig | None = None) -> CountResult:
    """Approximate n; every device ends with the same estimate on success."""
    cfg = config or CountConfig()
    if n < 1:
        raise NoActiveDevices("no devices")
    if model is ModelKind.NO_CD and n < 2:
        raise PreconditionViolated("NoCD needs at least two devices")
    listed = n <= cfg.materialize_limit
    tally = _Tally(n, listed)
    d1 = schedule.d1
    path = []

    if listed:
        labels = draw_labels(derive_rng(seed, 1), n, d1)
        order = np.argsort(labels, kind="stable")
        sorted_labels = labels[order]

        def cohort(k):
            lo, hi = np.searchsorted(sorted_labels, [k, k + 1])
            return int(hi - lo), order[lo:hi]
    else:
        counts = LabelCounts(derive_rng(seed, 1), n, d1)

        def cohort(k):
            return counts(k), None

    def finish(est, how, ci, k, agreed, limit=False):
        return CountResult(est, how, ci, k, agreed, slots, listens, checks, tests, i_t,
                           tally.summary(), limit, path, msg_bytes)

    slots = listens = checks = tests = msg_bytes = 0
    i_t = None
    tr = _trivial(n, 2 ** d1, model, derive_rng(seed, 2), tally, cfg.trivial_pairs)
    slots += tr.slots
    path.append(("trivial", tr.exceeds, tr.estimate))
    if not tr.agreed:
        return finish(None, "failed", None, None, False)
    if not tr.exceeds:
        return finish(tr.estimate, "trivial", None, None, True)

    k0 = d1
    if model.listener_cd:
        es = _search(n, schedule, derive_rng(seed, 3))
        tests, i_t = es.tests, es.i_tilde
        tally.everyone(es.tests)
        slots += es.slots
        path.append(("search", i_t))
        if i_t >= 3:
            k0 = schedule.d(i_t - 2)

    i_hat = schedule.i_hat(math.log2(n))
    limit = cfg.slot_limit
    if limit is None:
        limit = 64 * schedule.d(i_hat + 2) ** 2
    k_cap = 2 * math.ceil(math.log2(n)) + 4 * d1 + 64
    leaders: list = []
    k = k0
    while k <= k_cap:
        m, members = cohort(k)
        n_tilde = 2.0 ** (k / 2)
        if m:
            res = _tns(m, n_tilde, model, derive_rng(seed, 4, k), c_id=cfg.c_id, beta=cfg.beta, c=cfg.c)
            keys = members[res.devices] if members is not None else res.devices
            tally.phase(keys, res.energy, res.hidden)
            if res.leader is not None:
                key = int(members[res.leader]) if members is not None else res.leader
                leaders.append(_Leader(k, key))
                path.append(("leader", k))
            slots += res.slots
            msg_bytes = max(msg_bytes, res.max_message_bytes)
        else:
            slots += tns_slots(n_tilde, model, cfg.c_id, cfg.c)
        ci = schedule.index_of(k)
        if ci is not None:
            won, agreed, heard, extra = _checkpoint(leaders, model)
            checks += 1
            slots += 2
            if leaders:
                msg_bytes = max(msg_bytes, CHECKPOINT_MESSAGE_BYTES)
            listens += heard
            tally.everyone(heard)
            if extra and listed:
                tally.phase(list(extra), list(extra.values()))
            path.append(("checkpoint", ci, won))
            if not agreed:
                return finish(None, "failed", ci, k, False)
            if won is not None:
                return finish(2 ** won, "checkpoint", ci, k, True)
            leaders = []
        if slots > limit:
            return finish(None, "failed", None, k, True, limit=True)
        k += 1
    return finish(None, "failed", None, k, True, limit=True)
