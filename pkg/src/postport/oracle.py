"""
Ground truth for pre- and post-selected statistics.

Everything here works on full density matrices of the bare system, with no
teleportation machinery, so protocol simulations can be checked against it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from . import engine as en
from .engine import DensityOperator, PovmSet, StateVector, SubsystemLayout, UnitaryOp
from .errors import LabelNotFound, PostSelectionImpossible, ResourceLimit

MAX_BRANCHES = 10**6

Step = Union[UnitaryOp, PovmSet]


def outcome_key(outcomes) -> str:
    """Flatten a tuple of measurement outcomes into a stable dictionary key."""
    return ",".join(str(o) for o in outcomes) if outcomes else "-"


@dataclass(frozen=True)
class ExperimentScript:
    """Ordered unitaries and measurements on declared subsystem labels."""

    steps: tuple = ()

    def __post_init__(self):
        steps = tuple(self.steps)
        for s in steps:
            if not isinstance(s, (UnitaryOp, PovmSet)):
                raise TypeError(f"script step must be UnitaryOp or PovmSet, got {type(s)}")
            if not s.acting_on:
                raise LabelNotFound("script step is not bound to any label")
        object.__setattr__(self, "steps", steps)

    @property
    def labels(self) -> tuple:
        seen = []
        for s in self.steps:
            for l in s.acting_on:
                if l not in seen:
                    seen.append(l)
        return tuple(seen)

    @property
    def n_measurements(self) -> int:
        return sum(isinstance(s, PovmSet) for s in self.steps)

    def relabel(self, mapping: dict) -> "ExperimentScript":
        out = []
        for s in self.steps:
            on = tuple(mapping.get(l, l) for l in s.acting_on)
            out.append(s.on(*on))
        return ExperimentScript(tuple(out))

    def check_layout(self, layout: SubsystemLayout) -> None:
        for l in self.labels:
            layout.axis(l)

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class TwoStateVector:
    """A pre-selected state paired with a post-selection on the same layout.

    ``post`` is either a bra (given by the components of the ket) or a PSD
    effect matrix.  Bras are normalized so that the post-selection is a
    physical measurement outcome ``|phi><phi|``.
    """

    pre: Union[StateVector, DensityOperator]
    post: np.ndarray

    def __post_init__(self):
        post = np.array(self.post, dtype=complex)
        n = self.pre.layout.total
        if post.ndim == 1:
            if post.shape[0] != n:
                raise ValueError(f"post-selection has length {post.shape[0]}, expected {n}")
            norm = np.linalg.norm(post)
            if norm < en.EPS_ZERO:
                raise ValueError("post-selection must be nonzero")
            post = post / norm
        elif post.shape != (n, n):
            raise ValueError(f"post-selection effect has shape {post.shape}")
        post.setflags(write=False)
        object.__setattr__(self, "post", post)

    @property
    def layout(self) -> SubsystemLayout:
        return self.pre.layout

    @property
    def effect(self) -> np.ndarray:
        if self.post.ndim == 1:
            return np.outer(self.post, self.post.conj())
        return self.post

    @property
    def rho(self) -> np.ndarray:
        return en.as_density(self.pre).matrix

    def pairing_probability(self) -> float:
        return float(np.trace(self.effect @ self.rho).real / np.trace(self.rho).real)


def _kraus(povm: PovmSet, layout: SubsystemLayout) -> list:
    return [en.embed(k, layout, povm.acting_on) for k in povm.kraus]


def abl_probabilities(tsv: TwoStateVector, povm: PovmSet) -> np.ndarray:
    """Conditional outcome distribution of one intermediate measurement.

    Branch ``a`` has weight ``tr(E_post K_a rho K_a^dagger)`` with ``K_a`` the
    square root of the POVM element; weights are normalized over outcomes.
    """
    rho = tsv.rho
    e = tsv.effect
    weights = np.array([np.trace(e @ k @ rho @ k.conj().T).real for k in _kraus(povm, tsv.layout)])
    total = weights.sum()
    if total < en.EPS_ZERO:
        raise PostSelectionImpossible("every branch of the intermediate measurement is post-selected away")
    return weights / total


def branch_operators(tsv: TwoStateVector, script: ExperimentScript) -> dict:
    """Unnormalized forward-evolved density matrix for every outcome sequence."""
    layout = tsv.layout
    script.check_layout(layout)
    branches = {(): tsv.rho}
    for step in script.steps:
        if isinstance(step, UnitaryOp):
            u = en.embed(step.matrix, layout, step.acting_on)
            branches = {k: u @ r @ u.conj().T for k, r in branches.items()}
            continue
        if len(branches) * len(step) > MAX_BRANCHES:
            raise ResourceLimit(f"more than {MAX_BRANCHES} branches")
        ks = _kraus(step, layout)
        branches = {
            key + (a,): k @ r @ k.conj().T for key, r in branches.items() for a, k in enumerate(ks)
        }
    return branches


class DirectResult(NamedTuple):
    conditional: dict
    acceptance: float
    counts: dict
    accepted: int
    trials: int


def run_direct(
    tsv: TwoStateVector,
    script: ExperimentScript,
    trials: int = 0,
    seed=None,
    mode: str = "exact",
) -> DirectResult:
    """Run ``script`` between the pre-selection and the post-selection.

    Exact mode sums branch weights; sampled mode simulates ``trials`` runs,
    performs the post-selection as a two-outcome measurement and discards the
    rejected runs.
    """
    if mode == "exact":
        branches = branch_operators(tsv, script)
        e = tsv.effect
        norm = np.trace(tsv.rho).real
        weights = {k: np.trace(e @ r).real / norm for k, r in branches.items()}
        acc = sum(weights.values())
        if acc < en.EPS_ZERO:
            raise PostSelectionImpossible("post-selection never succeeds")
        cond = {outcome_key(k): float(w / acc) for k, w in sorted(weights.items())}
        return DirectResult(cond, float(acc), {}, 0, 0)
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    return _sample_direct(tsv, script, trials, seed)


def _segments(script: ExperimentScript, layout: SubsystemLayout):
    """Fold unitaries into the measurement that follows them.

    Returns ``(stages, tail)`` where each stage is ``(U, kraus list)`` and
    ``tail`` is the unitary applied after the last measurement.
    """
    stages = []
    u = np.eye(layout.total, dtype=complex)
    for step in script.steps:
        if isinstance(step, UnitaryOp):
            u = en.embed(step.matrix, layout, step.acting_on) @ u
        else:
            stages.append((u, _kraus(step, layout)))
            u = np.eye(layout.total, dtype=complex)
    return stages, u


def _sample_direct(tsv, script, trials, seed) -> DirectResult:
    rng = np.random.default_rng(seed)
    stages, tail = _segments(script, tsv.layout)
    e = tsv.effect
    states = {(): tsv.rho / np.trace(tsv.rho).real}
    probs: dict = {}

    def outcome_probs(prefix):
        # Born probabilities of the next measurement (or of acceptance)
        if prefix not in probs:
            rho = states[prefix]
            if len(prefix) < len(stages):
                u, ks = stages[len(prefix)]
                rho = u @ rho @ u.conj().T
                branches = [k @ rho @ k.conj().T for k in ks]
                p = np.array([np.trace(b).real for b in branches])
                for a, b in enumerate(branches):
                    if p[a] > en.EPS_ZERO:
                        states[prefix + (a,)] = b / p[a]
            else:
                p = np.array([np.trace(e @ tail @ rho @ tail.conj().T).real])
            probs[prefix] = np.clip(p, 0.0, None)
        return probs[prefix]

    n_meas = len(stages)
    counts: dict = {}
    accepted = 0
    uniforms = rng.random((trials, n_meas + 1))
    for t in range(trials):
        prefix = ()
        for m in range(n_meas):
            c = np.cumsum(outcome_probs(prefix))
            a = int(np.searchsorted(c / c[-1], uniforms[t, m], side="right"))
            prefix = prefix + (min(a, len(c) - 1),)
        if uniforms[t, n_meas] < outcome_probs(prefix)[0]:
            accepted += 1
            key = outcome_key(prefix)
            counts[key] = counts.get(key, 0) + 1
    if accepted == 0:
        raise PostSelectionImpossible("no run was accepted")
    cond = {k: v / accepted for k, v in sorted(counts.items())}
    return DirectResult(cond, accepted / trials, dict(sorted(counts.items())), accepted, trials)


# --------------------------------------------------------------------------
# script construction helpers


def random_povm(d: int, label, rng, outcomes: int = 2) -> PovmSet:
    """Random non-projective POVM built from a random isometry."""
    v = en.random_unitary(d * outcomes, rng)[:, :d]
    blocks = [v[k * d:(k + 1) * d, :] for k in range(outcomes)]
    elements = [b.conj().T @ b for b in blocks]
    return PovmSet(elements, (label,))


def random_script(d: int, rng, label="S", max_steps: int = 3) -> ExperimentScript:
    """A short random mix of unitaries, projective measurements and POVMs.

    Always contains at least one measurement so conditional statistics exist.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n = int(rng.integers(1, max_steps + 1))
    steps = []
    for _ in range(n):
        kind = rng.integers(3)
        if kind == 0:
            steps.append(UnitaryOp(en.random_unitary(d, rng), (label,)))
        elif kind == 1:
            steps.append(en.projective_measurement(en.random_unitary(d, rng), label))
        else:
            steps.append(random_povm(d, label, rng))
    if not any(isinstance(s, PovmSet) for s in steps):
        steps.append(en.projective_measurement(en.random_unitary(d, rng), label))
    return ExperimentScript(tuple(steps))


def fourier_basis(d: int) -> np.ndarray:
    k = np.arange(d)
    return np.exp(2j * np.pi * np.outer(k, k) / d) / np.sqrt(d)


def z_measure(d: int = 2, label="S") -> ExperimentScript:
    return ExperimentScript((en.computational_measurement(d, label),))


def x_measure(d: int = 2, label="S") -> ExperimentScript:
    """Measurement in the Fourier basis; outcome 0 is ``|+>``."""
    return ExperimentScript((en.projective_measurement(fourier_basis(d), label),))


def bell_verify(d: int = 2, labels=("S", "T")) -> ExperimentScript:
    return ExperimentScript((en.bell_measurement(d, labels),))
