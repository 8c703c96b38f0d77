"""
Protocol runtime: a linear list of party-tagged steps that is both executed
(exactly, by enumerating every measurement branch, or by seeded sampling)
and rendered as an event log for ordering and causality checks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from . import engine as en
from .engine import EMPTY, PovmSet, State, StateVector
from .errors import PostSelectionImpossible, ProtocolOrderError

# branches lighter than this are dropped during exact enumeration
PRUNE = 1e-15

QUANTUM_KINDS = {"prepare", "entangle", "unitary", "correct", "measure", "script", "postselect", "discard"}


@dataclass(frozen=True)
class Event:
    t: int
    party: str
    kind: str
    labels: tuple = ()
    key: Optional[str] = None
    depends_on: tuple = ()
    note: str = ""
    receiver: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels"] = list(self.labels)
        d["depends_on"] = list(self.depends_on)
        return d


@dataclass(frozen=True)
class Message:
    sender: str
    receiver: str
    key: str
    bits: int

    @property
    def direction(self) -> str:
        return f"{self.sender}->{self.receiver}"


@dataclass
class Ledger:
    ebits: int = 0
    cbits_a_to_b: int = 0
    cbits_b_to_a: int = 0
    ports: int = 0
    local_pairs: int = 0
    ebits_qubit_equivalent: float = 0.0
    baseline: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def bell_bits(d: int) -> int:
    return math.ceil(math.log2(d * d))


def port_bits(n: int) -> int:
    return math.ceil(math.log2(n)) if n > 1 else 0


# --------------------------------------------------------------------------
# steps


class Step:
    party: str
    kind: str
    labels: tuple = ()
    key: Optional[str] = None
    depends_on: tuple = ()
    note: str = ""
    branching = False

    def run(self, state: State, outcomes: dict) -> list:
        raise NotImplementedError


class Prepare(Step):
    """Append fresh subsystems; ``shared`` marks a resource split between parties."""

    def __init__(self, party, state: State, shared: bool = False, note: str = "", pair: bool = False):
        self.party = party
        self.state = state
        self.labels = state.layout.labels
        self.shared = shared
        self.pair = pair or shared
        self.kind = "entangle" if shared else "prepare"
        self.note = note

    def run(self, state, outcomes):
        return [(None, en.tensor(state, self.state))]


class Gate(Step):
    def __init__(self, party, matrix, labels, kind: str = "unitary", note: str = ""):
        self.party = party
        self.matrix = np.asarray(matrix, dtype=complex)
        self.labels = tuple(labels)
        self.kind = kind
        self.note = note

    def run(self, state, outcomes):
        return [(None, en.apply_matrix(state, self.matrix, self.labels))]


class Correct(Step):
    """Unitary chosen by a previously obtained outcome (``table[value]``)."""

    def __init__(self, party, table: Sequence, labels, key: str, note: str = "", kind: str = "correct"):
        self.party = party
        self.table = [np.asarray(m, dtype=complex) for m in table]
        self.labels = tuple(labels)
        self.depends_on = (key,)
        self.kind = kind
        self.note = note

    def run(self, state, outcomes):
        m = self.table[outcomes[self.depends_on[0]]]
        return [(None, en.apply_matrix(state, m, self.labels))]


class Measure(Step):
    """Non-destructive measurement through the Lüders instrument."""

    branching = True

    def __init__(self, party, povm: PovmSet, key: str, kind: str = "measure", note: str = ""):
        self.party = party
        self.povm = povm
        self.labels = povm.acting_on
        self.key = key
        self.kind = kind
        self.note = note

    def run(self, state, outcomes):
        return [(a, en.apply_matrix(state, k, self.labels)) for a, k in enumerate(self.povm.kraus)]


class PostSelect(Step):
    """Two-outcome measurement ``{E, 1-E}``; value 1 means accepted."""

    branching = True

    def __init__(self, party, effect, labels, key: str = "accept", note: str = ""):
        self.party = party
        effect = np.asarray(effect, dtype=complex)
        if effect.ndim == 1:
            norm = np.linalg.norm(effect)
            if norm < en.EPS_ZERO:
                raise ValueError("post-selection effect must be nonzero")
            effect = np.outer(effect, effect.conj()) / norm**2
        self.effect = effect
        self.labels = tuple(labels)
        self.key = key
        self.kind = "postselect"
        self.note = note
        eye = np.eye(effect.shape[0])
        self._kraus = (en.psd_sqrt(eye - effect), en.psd_sqrt(effect))

    def run(self, state, outcomes):
        return [(a, en.apply_matrix(state, k, self.labels)) for a, k in enumerate(self._kraus)]


class Discard(Step):
    def __init__(self, party, labels, note: str = ""):
        self.party = party
        self.labels = tuple(labels)
        self.kind = "discard"
        self.note = note

    def run(self, state, outcomes):
        return [(None, en.discard(state, self.labels))]


class Send(Step):
    """Classical message carrying an earlier outcome; no quantum action."""

    def __init__(self, sender, receiver, key: str, bits: int, note: str = ""):
        self.party = sender
        self.receiver = receiver
        self.key = key
        self.bits = bits
        self.kind = "send"
        self.depends_on = (key,)
        self.note = note

    def run(self, state, outcomes):
        return [(None, state)]


def script_steps(script, mapping: dict, party: str, prefix: str = "s") -> list:
    """Translate an experiment script into runtime steps on relabeled systems.

    Measurement ``m`` of the script records its outcome under ``f"{prefix}{m}"``.
    """
    steps = []
    m = 0
    for s in script.relabel(mapping).steps:
        if isinstance(s, PovmSet):
            steps.append(Measure(party, s, f"{prefix}{m}", kind="script"))
            m += 1
        else:
            steps.append(Gate(party, s.matrix, s.acting_on, kind="script"))
    return steps


def script_outcome(outcomes: dict, n_meas: int, prefix: str = "s") -> str:
    return ",".join(str(outcomes[f"{prefix}{m}"]) for m in range(n_meas)) if n_meas else "-"


def _weight(state: State) -> float:
    return state.norm_tracked if isinstance(state, StateVector) else state.trace_tracked


# --------------------------------------------------------------------------
# programs


@dataclass
class Leaf:
    outcomes: dict
    weight: float
    state: State

    @property
    def accepted(self) -> bool:
        return all(v == 1 for k, v in self.outcomes.items() if k.startswith("accept"))


@dataclass
class Program:
    steps: list = field(default_factory=list)

    def add(self, step: Step) -> Step:
        self.steps.append(step)
        return step

    def extend(self, steps) -> None:
        for s in steps:
            self.add(s)

    # ---- event log

    def events(self) -> list:
        out = []
        for t, s in enumerate(self.steps):
            note = s.note
            if isinstance(s, Send):
                out.append(Event(t, s.party, "send", (), s.key, s.depends_on, f"{s.bits} bits", s.receiver))
                continue
            out.append(Event(t, s.party, s.kind, tuple(s.labels), s.key, tuple(s.depends_on), note))
        return out

    def messages(self) -> list:
        return [Message(s.party, s.receiver, s.key, s.bits) for s in self.steps if isinstance(s, Send)]

    def ledger(self, dims_of: Optional[Callable] = None) -> Ledger:
        led = Ledger()
        for s in self.steps:
            if isinstance(s, Prepare) and s.shared:
                led.ebits += 1
                d = s.state.layout.total
                led.ebits_qubit_equivalent += 0.5 * math.log2(d)
            elif isinstance(s, Prepare) and s.pair:
                led.local_pairs += 1
            elif isinstance(s, Send):
                if s.party == "A":
                    led.cbits_a_to_b += s.bits
                else:
                    led.cbits_b_to_a += s.bits
        return led

    # ---- execution

    def enumerate(self, initial: Optional[State] = None) -> Iterator[Leaf]:
        """Depth-first enumeration of every branch with its unnormalized weight."""
        state = initial if initial is not None else StateVector(EMPTY, [1.0])
        yield from self._dfs(0, state, {})

    def _dfs(self, i: int, state: State, outcomes: dict) -> Iterator[Leaf]:
        while i < len(self.steps):
            step = self.steps[i]
            children = step.run(state, outcomes)
            if not step.branching:
                state = children[0][1]
                i += 1
                continue
            for value, child in children:
                if _weight(child) < PRUNE:
                    continue
                new = dict(outcomes)
                new[step.key] = value
                if step.kind == "postselect" and value == 0:
                    yield Leaf(new, _weight(child), child)
                    continue
                yield from self._dfs(i + 1, child, new)
            return
        yield Leaf(outcomes, _weight(state), state)

    def sample(self, trials: int, seed, initial: Optional[State] = None) -> list:
        """Monte Carlo runs; each measurement outcome is drawn from the Born
        probabilities of the current collapsed state.  Collapsed states are
        memoized by outcome history, so every distinct history is simulated
        once.  A rejected post-selection ends the run.  Returns one outcome
        dictionary per trial."""
        rng = np.random.default_rng(seed)
        root = initial if initial is not None else StateVector(EMPTY, [1.0])
        cache: dict = {}

        def node(history: tuple):
            if history in cache:
                return cache[history]
            if history:
                parent = node(history[:-1])
                i, _, children, outcomes = parent
                step = self.steps[i]
                value, child = children[history[-1]]
                outcomes = dict(outcomes)
                outcomes[step.key] = value
                state, i = child, i + 1
                if step.kind == "postselect" and value == 0:
                    cache[history] = (len(self.steps), None, None, outcomes)
                    return cache[history]
            else:
                state, i, outcomes = root, 0, {}
            while i < len(self.steps) and not self.steps[i].branching:
                state = self.steps[i].run(state, outcomes)[0][1]
                i += 1
            if i == len(self.steps):
                cache[history] = (i, None, None, outcomes)
                return cache[history]
            children = self.steps[i].run(state, outcomes)
            w = np.array([_weight(c) for _, c in children])
            if w.sum() < en.EPS_ZERO:
                raise PostSelectionImpossible("reached a branch of zero weight")
            cdf = np.cumsum(w / w.sum())
            cache[history] = (i, cdf, children, outcomes)
            return cache[history]

        results = []
        for _ in range(trials):
            history: tuple = ()
            while True:
                i, cdf, children, outcomes = node(history)
                if cdf is None:
                    results.append(outcomes)
                    break
                a = int(np.searchsorted(cdf, rng.random(), side="right"))
                history = history + (min(a, len(cdf) - 1),)
        return results


# --------------------------------------------------------------------------
# event-log validation


def validate_dependencies(events: Sequence[Event]) -> None:
    """Every consumed key must already be known to the consuming party."""
    known = {"A": set(), "B": set()}
    for e in events:
        for k in e.depends_on:
            if k not in known.setdefault(e.party, set()):
                raise ProtocolOrderError(f"event {e.t} ({e.party} {e.kind}) uses {k!r} before it is known")
        if e.key is not None and e.kind != "send":
            known.setdefault(e.party, set()).add(e.key)
        if e.kind == "send":
            known.setdefault(e.receiver, set()).add(e.key)


def message_keys(events: Sequence[Event]) -> dict:
    """Map message key -> (sender, receiver)."""
    out = {}
    for e in events:
        if e.kind == "send":
            out[e.key] = (e.party, e.receiver)
    return out


def validate_causal_independence(events: Sequence[Event]) -> None:
    """No quantum event may consume an outcome produced by the other party."""
    owner = {e.key: e.party for e in events if e.key is not None and e.kind != "send"}
    for e in events:
        if e.kind not in QUANTUM_KINDS:
            continue
        for k in e.depends_on:
            if owner.get(k, e.party) != e.party:
                raise ProtocolOrderError(
                    f"quantum event {e.t} of party {e.party} waits for {k!r} from {owner[k]}"
                )


def validate_order(events: Sequence[Event], before: Callable, after: Callable, what: str) -> None:
    """All events matching ``before`` precede every event matching ``after``."""
    b = [e.t for e in events if before(e)]
    a = [e.t for e in events if after(e)]
    if b and a and max(b) > min(a):
        raise ProtocolOrderError(what)


def quantum_events(events: Sequence[Event]) -> list:
    """Quantum events with their log positions stripped, for schedule comparisons."""
    return [
        (e.party, e.kind, e.labels, e.key, e.depends_on, e.note) for e in events if e.kind in QUANTUM_KINDS
    ]


# --------------------------------------------------------------------------
# run records


@dataclass
class RunRecord:
    protocol: str
    params: dict
    events: list
    messages: list
    outcomes: list = field(default_factory=list)
    conditional_statistics: dict = field(default_factory=dict)
    acceptance_probability: Optional[float] = None
    post_selection_succeeded: Optional[bool] = None
    fidelity: Optional[float] = None
    ledger: Ledger = field(default_factory=Ledger)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "params": self.params,
            "outcomes": self.outcomes,
            "conditional_statistics": self.conditional_statistics,
            "acceptance_probability": self.acceptance_probability,
            "post_selection_succeeded": self.post_selection_succeeded,
            "fidelity": self.fidelity,
            "ledger": self.ledger.to_dict(),
            "messages": [
                {"sender": m.sender, "receiver": m.receiver, "key": m.key, "bits": m.bits}
                for m in self.messages
            ],
            "events": [e.to_dict() for e in self.events],
            "extra": self.extra,
        }


def distribution(pairs) -> dict:
    """Normalize ``{key: weight}``, sorted by key."""
    pairs = dict(pairs)
    total = sum(pairs.values())
    if total < en.EPS_ZERO:
        raise PostSelectionImpossible("no accepted weight")
    return {k: v / total for k, v in sorted(pairs.items())}


def outcome_table(weights: dict, counts: Optional[dict] = None) -> list:
    counts = counts or {}
    keys = sorted(set(weights) | set(counts))
    return [
        {"label": str(k), "probability": float(weights.get(k, 0.0)), "count": int(counts.get(k, 0))}
        for k in keys
    ]
