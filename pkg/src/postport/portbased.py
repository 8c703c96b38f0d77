"""
Port-based teleportation with maximally entangled ports.

POVMs act on the space ``input ⊗ port_1 ⊗ ... ⊗ port_n`` (input most
significant).  Elements are stored in the low-rank form
``scalar * 1 + L @ core @ L^dagger``: the pretty-good measurement has rank at
most ``n * d^(n-1)`` away from a multiple of the identity, which keeps
``d = 16`` channels tractable without forming dense 4096 x 4096 matrices.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple, Optional

import numpy as np

from . import engine as en
from . import oracle as orc
from .engine import DensityOperator, PovmSet, StateVector, SubsystemLayout
from .errors import InvalidDimension, PostSelectionImpossible, ResourceLimit
from .oracle import ExperimentScript, TwoStateVector
from .runtime import (
    Discard,
    Gate,
    Measure,
    PostSelect,
    Prepare,
    Program,
    RunRecord,
    Send,
    distribution,
    outcome_table,
    port_bits,
    script_outcome,
    script_steps,
    validate_dependencies,
)

DEFAULT_MEMORY_CAP = 2**30
PINV_CUTOFF = 1e-12


def memory_cap(cap: Optional[int] = None) -> int:
    if cap is not None:
        return int(cap)
    env = os.environ.get("SIM_MEMORY_CAP")
    return int(env) if env else DEFAULT_MEMORY_CAP


def _check_cap(dim: int, cap: Optional[int]) -> None:
    limit = memory_cap(cap)
    if dim * dim > limit:
        raise ResourceLimit(f"operator of dimension {dim} needs {dim * dim} entries (cap {limit})")


@dataclass(frozen=True, eq=False)
class LowRankElement:
    """Hermitian operator ``scalar * 1 + basis @ core @ basis^dagger``."""

    dim: int
    scalar: float
    basis: np.ndarray
    core: np.ndarray

    def dense(self, cap: Optional[int] = None) -> np.ndarray:
        _check_cap(self.dim, cap)
        out = self.basis @ self.core @ self.basis.conj().T
        out[np.diag_indices(self.dim)] += self.scalar
        return out

    def matmul(self, x: np.ndarray) -> np.ndarray:
        """``E @ x`` for ``x`` of shape (dim, k)."""
        return self.scalar * x + self.basis @ (self.core @ (self.basis.conj().T @ x))

    def expect(self, rho: np.ndarray) -> float:
        """``tr(E rho)``."""
        b = self.basis
        return float((self.scalar * np.trace(rho) + np.trace(self.core @ (b.conj().T @ rho @ b))).real)

    def min_eigenvalue(self) -> float:
        q, r = np.linalg.qr(self.basis)
        inner = r @ self.core @ r.conj().T
        w = np.linalg.eigvalsh((inner + inner.conj().T) / 2)
        lo = self.scalar + w.min() if w.size else self.scalar
        if q.shape[1] < self.dim:
            lo = min(lo, self.scalar)
        return float(lo)


def _port_vectors(n: int, d: int) -> np.ndarray:
    """Columns ``|Phi+>_{in, port_i} ⊗ |m>_{other ports}`` for every i and m."""
    rest = d ** (n - 1)
    phi = np.eye(d, dtype=complex) / math.sqrt(d)
    blocks = []
    for i in range(n):
        # axes: in, port_i, other ports (in order), column index m
        t = np.einsum("ab,mc->abmc", phi, np.eye(rest, dtype=complex)).reshape(d, d, *([d] * (n - 1)), rest)
        order = [0] + list(range(2, 2 + i)) + [1] + list(range(2 + i, n + 1)) + [n + 1]
        t = np.transpose(t, order)
        blocks.append(t.reshape(d ** (n + 1), rest))
    return np.concatenate(blocks, axis=1)


@dataclass(frozen=True, eq=False)
class PbtChannel:
    """Port-based teleportation POVM and the channels it heralds.

    ``elements[i]`` heralds port ``i``; the probabilistic variant has one more
    element, the failure outcome.
    """

    n: int
    d: int
    variant: str
    elements: tuple

    @property
    def failure_outcome(self) -> bool:
        return self.variant == "probabilistic"

    @property
    def dim(self) -> int:
        return self.d ** (self.n + 1)

    @property
    def outcome_labels(self) -> tuple:
        labels = tuple(str(i) for i in range(self.n))
        return labels + ("fail",) if self.failure_outcome else labels

    def povm(self, labels, cap: Optional[int] = None) -> PovmSet:
        return PovmSet([e.dense(cap) for e in self.elements], tuple(labels), self.outcome_labels)

    def structured_povm(self, labels) -> "StructuredPovm":
        return StructuredPovm(self, tuple(labels))

    def completeness_error(self) -> float:
        return float(np.max(np.abs(sum(e.dense() for e in self.elements) - np.eye(self.dim))))

    def min_eigenvalue(self) -> float:
        return min(e.min_eigenvalue() for e in self.elements)

    def heralded_choi(self, i: int) -> np.ndarray:
        return self._chois[i]

    @cached_property
    def _chois(self) -> tuple:
        return tuple(self._choi(i) for i in range(self.n))

    def _choi(self, i: int) -> np.ndarray:
        """Choi matrix ``sum_ab |a><b| ⊗ N_i(|a><b|)`` of the map from the
        input to port ``i`` conditioned on outcome ``i`` (trace = herald
        probability times ``d``)."""
        d, n = self.d, self.n
        e = self.elements[i]
        rest = d ** (n - 1)
        order = [0, i + 1] + [k + 1 for k in range(n) if k != i]

        def split(mat):
            t = mat.reshape([d] * (n + 1) + [mat.shape[1]])
            t = np.transpose(t, order + [n + 1])
            return t.reshape(d, d, rest, mat.shape[1])

        left = split(e.basis @ e.core)
        right = split(e.basis)
        r = np.einsum("blmc,akmc->blak", left, right.conj())
        r = r + e.scalar * rest * np.einsum("ba,lk->blak", np.eye(d), np.eye(d))
        choi = np.transpose(r, (2, 3, 0, 1)).reshape(d * d, d * d) / d**n
        return choi

    def channel_choi(self) -> np.ndarray:
        return sum(self.heralded_choi(i) for i in range(self.n))

    def apply_heralded(self, i: int, rho: np.ndarray) -> np.ndarray:
        """Unnormalized port-``i`` output for input ``rho`` (trace = herald probability)."""
        d = self.d
        j = self.heralded_choi(i).reshape(d, d, d, d)
        return np.einsum("akbl,ab->kl", j, rho)

    def entanglement_fidelity(self) -> float:
        d = self.d
        j = self.channel_choi().reshape(d, d, d, d)
        return float(np.einsum("aabb->", j).real / d**2)

    def average_fidelity(self) -> float:
        d = self.d
        return (d * self.entanglement_fidelity() + 1) / (d + 1)

    def conditional_fidelity(self) -> float:
        """Average fidelity given a port outcome (equals ``average_fidelity`` when deterministic)."""
        d = self.d
        return (d * self.entanglement_fidelity() / self.success_probability() + 1) / (d + 1)

    def success_probability(self) -> float:
        """Probability of a port outcome for any input (input-independent here)."""
        d = self.d
        return float(sum(np.trace(self.heralded_choi(i)).real for i in range(self.n)) / d)


class StructuredPovm:
    """POVM bound to labels whose dense Kraus operators are built only when a
    simulation actually applies it."""

    def __init__(self, channel: PbtChannel, acting_on: tuple):
        self.channel = channel
        self.acting_on = acting_on
        self.outcome_labels = channel.outcome_labels

    def __len__(self):
        return len(self.channel.elements)

    @cached_property
    def kraus(self) -> tuple:
        return tuple(en.psd_sqrt(e.dense()) for e in self.channel.elements)


@lru_cache(maxsize=32)
def _pgm(n: int, d: int) -> PbtChannel:
    v = _port_vectors(n, d)
    rest = d ** (n - 1)
    gram = v.conj().T @ v
    w, u = np.linalg.eigh(gram)
    # eigenvalues of rho = V V^dagger / rest coincide with those of gram / rest
    keep = w / rest > PINV_CUTOFF
    inv_sqrt = (u[:, keep] / np.sqrt(w[keep])) @ u[:, keep].conj().T
    m = v @ inv_sqrt
    elements = []
    for i in range(n):
        core = -np.eye(n * rest, dtype=complex) / n
        core[i * rest:(i + 1) * rest, i * rest:(i + 1) * rest] += np.eye(rest)
        elements.append(LowRankElement(d ** (n + 1), 1.0 / n, m, core))
    return PbtChannel(n, d, "deterministic", tuple(elements))


def build_pgm(n: int, d: int, cap: Optional[int] = None) -> PbtChannel:
    """Deterministic port-based teleportation with the pretty-good measurement.

    Signals are ``|Phi+><Phi+|_{in,port_i} ⊗ 1/d^(n-1)``; the part of the
    identity outside the support of their sum is shared equally among the
    ``n`` outcomes.
    """
    if n < 1:
        raise ValueError("need at least one port")
    if d < 2:
        raise InvalidDimension(f"dimension {d} < 2")
    _check_cap(d ** (n + 1), cap)
    return _pgm(n, d)


def _isotypic_projectors(k: int, d: int) -> list:
    """Projectors onto the eigenspaces of the sum of all transpositions on
    ``k`` systems of dimension ``d``.

    These are the isotypic components of the permutation action whenever the
    content sums of the Young diagrams involved are distinct (always true for
    fewer than seven systems); coinciding components are merged, which keeps
    the POVM valid.
    """
    dim = d**k
    if k < 2:
        return [np.eye(dim, dtype=complex)]
    layout = SubsystemLayout(tuple(range(k)), (d,) * k)
    t = np.zeros((dim, dim), dtype=complex)
    swap = en.swap_matrix(d)
    for a in range(k):
        for b in range(a + 1, k):
            t += en.embed(swap, layout, (a, b))
    w, u = np.linalg.eigh(t)
    groups = np.round(w, 6)
    return [u[:, groups == g] @ u[:, groups == g].conj().T for g in np.unique(groups)]


@lru_cache(maxsize=32)
def _prob(n: int, d: int) -> PbtChannel:
    v = _port_vectors(n, d)
    rest = d ** (n - 1)
    theta = np.zeros((rest, rest), dtype=complex)
    for proj in _isotypic_projectors(n - 1, d):
        w, u = np.linalg.eigh(proj)
        sub = u[:, w > 0.5]
        vb = v.reshape(d ** (n + 1), n, rest) @ sub
        vb = vb.reshape(d ** (n + 1), -1)
        lam = np.linalg.eigvalsh(vb.conj().T @ vb).max()
        theta += proj / lam
    elements = []
    total = np.zeros((n * rest, n * rest), dtype=complex)
    for i in range(n):
        core = np.zeros_like(total)
        core[i * rest:(i + 1) * rest, i * rest:(i + 1) * rest] = theta
        total += core
        elements.append(LowRankElement(d ** (n + 1), 0.0, v, core))
    elements.append(LowRankElement(d ** (n + 1), 1.0, v, -total))
    return PbtChannel(n, d, "probabilistic", tuple(elements))


def pbt_probabilistic(n: int, d: int, cap: Optional[int] = None) -> PbtChannel:
    """Probabilistic variant: ``Pi_i = |Phi+><Phi+|_{in,port_i} ⊗ Theta``.

    ``Theta`` acts on the other ports as ``sum_a P_a / lambda_a``, where
    ``P_a`` are the isotypic projectors of the permutation action and
    ``lambda_a`` the largest eigenvalue of ``sum_i |Phi+><Phi+| ⊗ P_a``, so
    each component is scaled as far as completeness allows.  Success in port
    ``i`` projects the input onto a maximally entangled state with that port's
    half-pair, so the heralded output is the input exactly; everything else is
    merged into a single failure outcome.
    """
    if n < 1:
        raise ValueError("need at least one port")
    if d < 2:
        raise InvalidDimension(f"dimension {d} < 2")
    _check_cap(d ** (n + 1), cap)
    return _prob(n, d)


# --------------------------------------------------------------------------
# pre-selected port-based teleportation


def _port_resource(d: int, a, b) -> StateVector:
    """``|Phi+>`` of total dimension ``d^k`` between label groups ``a`` and ``b``."""
    state = None
    for x, y in zip(a, b):
        pair = en.maximally_entangled(d, (x, y))
        state = pair if state is None else en.tensor(state, pair)
    return en.reorder(state, tuple(a) + tuple(b))


class PbtResult(NamedTuple):
    port: Optional[int]
    state: DensityOperator
    record: RunRecord
    ensemble: list


def pbt_program(channel: PbtChannel) -> Program:
    n, d = channel.n, channel.d
    prog = Program()
    prog.add(Prepare("A", en.maximally_mixed(d, "A"), note="input"))
    for i in range(n):
        prog.add(Prepare("A", en.maximally_entangled(d, (f"a{i}", f"B{i}")), shared=True, note=f"port {i}"))
    labels = ("A",) + tuple(f"a{i}" for i in range(n))
    prog.add(Measure("A", channel.structured_povm(labels), "i", note=f"{channel.variant} PBT POVM"))
    prog.add(Send("A", "B", "i", port_bits(n + (1 if channel.failure_outcome else 0))))
    return prog


def pbt_teleport(channel: PbtChannel, psi, mode: str = "exact", seed=None, trials: int = 1) -> PbtResult:
    """Send ``psi`` through the port-based channel.

    Exact mode returns the heralded ensemble ``[(p_i, output_i)]`` and, as
    ``state``, the average output over port outcomes (conditioned on success
    for the probabilistic variant).  Sampled mode draws ``trials`` outcomes;
    ``port`` and ``state`` belong to the first draw and ``fidelity`` averages
    over the successful draws.
    """
    rho = en.as_density(psi).normalized()
    d = channel.d
    if rho.layout.total != d:
        raise InvalidDimension(f"input of dimension {rho.layout.total} for a d={d} channel")
    outs = [channel.apply_heralded(i, rho.matrix) for i in range(channel.n)]
    probs = [float(np.trace(o).real) for o in outs]
    p_success = sum(probs)
    ensemble = [(p, o / p if p > en.EPS_ZERO else o) for p, o in zip(probs, outs)]
    weights = {str(i): p for i, p in enumerate(probs)}
    if channel.failure_outcome:
        weights["fail"] = max(0.0, 1.0 - p_success)
    pure = isinstance(psi, StateVector)
    v = psi.normalized().amplitudes if pure else None

    def fid(m):
        return float(np.vdot(v, m @ v).real) if pure else None

    port = None
    out_state = DensityOperator(SubsystemLayout(("B",), (d,)), sum(outs) / p_success)
    fidelity = fid(out_state.matrix)
    counts = {}
    if mode == "sampled":
        rng = np.random.default_rng(seed)
        labels = list(weights)
        p = np.array([weights[k] for k in labels])
        draws = rng.choice(len(p), size=trials, p=p / p.sum())
        counts = {labels[a]: int(np.sum(draws == a)) for a in range(len(p)) if np.any(draws == a)}
        first = labels[int(draws[0])]
        if first == "fail":
            out_state = None
        else:
            port = int(first)
            out_state = DensityOperator(SubsystemLayout((f"B{port}",), (d,)), ensemble[port][1])
        good = [int(labels[a]) for a in draws if labels[a] != "fail"]
        fidelity = float(np.mean([fid(ensemble[i][1]) for i in good])) if pure and good else None
    elif mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    prog = pbt_program(channel)
    led = prog.ledger()
    led.ports = channel.n
    record = RunRecord(
        protocol="pbt" if channel.variant == "deterministic" else "pbt-prob",
        params={"dim": d, "ports": channel.n, "trials": trials if mode == "sampled" else None, "seed": seed, "mode": mode},
        events=prog.events(),
        messages=prog.messages(),
        outcomes=outcome_table(weights, counts),
        acceptance_probability=p_success,
        fidelity=fidelity,
        ledger=led,
        extra={
            "entanglement_fidelity": channel.entanglement_fidelity(),
            "average_fidelity": channel.average_fidelity(),
            "conditional_fidelity": channel.conditional_fidelity(),
            "p_success": p_success,
        },
    )
    return PbtResult(port, out_state, record, ensemble)


# --------------------------------------------------------------------------
# post-selected port-based teleportation


def pbt_post_program(post_effect, n: int, d: int, script: ExperimentScript, system="S") -> Program:
    ch = build_pgm(n, d)
    prog = Program()
    for j in range(n):
        prog.add(Prepare("B", en.maximally_mixed(d, f"B{j}"), note=f"port {j}: 1/d"))
    prog.add(Prepare("A", en.maximally_entangled(d, ("A", "b")), shared=True, note="|Phi+>_Ab"))
    for j in range(n):
        prog.extend(script_steps(script, {system: f"B{j}"}, "B", prefix=f"p{j}s"))
    labels = ("b",) + tuple(f"B{j}" for j in range(n))
    prog.add(Measure("B", ch.povm(labels), "j", note="PBT POVM on b B_0..B_n-1"))
    prog.add(PostSelect("A", post_effect, ("A",), note="post-selection <Phi|"))
    prog.add(Send("A", "B", "accept", 1, note="post-selection succeeded"))
    return prog


def _heralded_summary(leaves, stat) -> tuple:
    """Acceptance probability and heralded conditional distribution."""
    total = sum(l.weight for l in leaves)
    acc = 0.0
    cond: dict = {}
    for leaf in leaves:
        if not leaf.accepted:
            continue
        acc += leaf.weight / total
        k = stat(leaf.outcomes)
        cond[k] = cond.get(k, 0.0) + leaf.weight
    return acc, distribution(cond)


def _sampled_summary(runs, stat) -> tuple:
    counts: dict = {}
    accepted = 0
    for o in runs:
        if all(v == 1 for k, v in o.items() if k.startswith("accept")):
            accepted += 1
            k = stat(o)
            counts[k] = counts.get(k, 0) + 1
    if not accepted:
        raise PostSelectionImpossible("no run was accepted")
    return accepted / len(runs), {k: v / accepted for k, v in sorted(counts.items())}, counts


def pbt_post_selected(
    post_effect,
    n: int,
    d: int,
    script: Optional[ExperimentScript] = None,
    mode: str = "exact",
    seed=None,
    trials: int = 10_000,
    system="S",
) -> RunRecord:
    """Post-selected port-based teleportation.

    Bob runs ``script`` in each of his ``n`` ports, then applies the PBT POVM
    with his half ``b`` of the shared pair as input.  The outcome names the
    port whose results behave as if post-selected with ``<Phi|``; Alice only
    reports whether her post-selection succeeded.
    """
    post_effect = np.asarray(post_effect, dtype=complex)
    if post_effect.shape != (d,) or np.linalg.norm(post_effect) < en.EPS_ZERO:
        raise PostSelectionImpossible("post-selection must be a nonzero vector of length d")
    script = script or ExperimentScript()
    prog = pbt_post_program(post_effect, n, d, script, system)
    validate_dependencies(prog.events())
    nm = script.n_measurements

    def stat(o):
        return script_outcome(o, nm, prefix=f"p{o['j']}s")

    extra = {}
    if mode == "exact":
        acc, cond = _heralded_summary(list(prog.enumerate()), stat)
    else:
        acc, cond, counts = _sampled_summary(prog.sample(trials, seed), stat)
        extra["conditional_counts"] = counts
    led = prog.ledger()
    led.ports = n
    return RunRecord(
        protocol="pbt-post",
        params={"dim": d, "ports": n, "trials": trials if mode == "sampled" else None, "seed": seed, "mode": mode},
        events=prog.events(),
        messages=prog.messages(),
        outcomes=outcome_table(cond),
        conditional_statistics=cond,
        acceptance_probability=acc,
        post_selection_succeeded=acc > 0,
        ledger=led,
        extra=extra,
    )


# --------------------------------------------------------------------------
# pre- and post-selected port-based teleportation


def step1_program(pre: StateVector) -> Program:
    """Alice's conversion of ``<Phi|_A |Psi>_A`` into a pre-selection on A1 A2."""
    d = pre.layout.dims[0]
    src = pre.layout.labels[0]
    prog = Program()
    prog.add(Prepare("A", pre.relabel({src: "A"}), note="pre-selected |Psi>_A"))
    prog.add(Prepare("A", en.basis_state(SubsystemLayout(("A2",), (d,)), [0]), note="blank A2"))
    prog.add(Gate("A", en.swap_matrix(d), ("A", "A2"), note="swap |Psi> into A2"))
    prog.add(Discard("A", ("A",), note="reset A"))
    prog.add(Prepare("A", en.maximally_entangled(d, ("A", "A1")), pair=True, note="|Phi+>_AA1"))
    return prog


def step1_state(pre: StateVector, post_effect) -> tuple:
    """Run step 1 and apply Alice's post-selection: returns (amplitude, state on A1 A2)."""
    leaf = next(step1_program(pre).enumerate())
    state = en.reorder(leaf.state, ("A", "A1", "A2"))
    phi = np.asarray(post_effect, dtype=complex)
    phi = phi / np.linalg.norm(phi)
    amp = en.contract_bra(state, phi, ("A",))
    return math.sqrt(amp.norm_tracked), amp.normalized()


def pbt_prepost_program(pre: StateVector, post_effect, n_a: int, n_b: int, script: ExperimentScript) -> Program:
    d = pre.layout.dims[0]
    src = pre.layout.labels[0]
    alice = build_pgm(n_a, d * d)
    bob = build_pgm(n_b, d * d)
    prog = step1_program(pre)
    for i in range(n_a):
        prog.add(
            Prepare(
                "A",
                _port_resource(d, (f"a{i}_1", f"a{i}_2"), (f"b{i}", f"bt{i}")),
                shared=True,
                note=f"d^2 port {i}",
            )
        )
    for i in range(n_a):
        for j in range(n_b):
            prog.add(Prepare("B", en.maximally_entangled(d, (f"B{i}{j}", f"b{i}{j}")), pair=True, note=f"port ({i},{j})"))
    for i in range(n_a):
        for j in range(n_b):
            prog.extend(script_steps(script, {src: f"B{i}{j}"}, "B", prefix=f"s{i}_{j}_"))
    labels = ("A1", "A2") + tuple(l for i in range(n_a) for l in (f"a{i}_1", f"a{i}_2"))
    prog.add(Measure("A", alice.povm(labels), "i", note="PBT POVM of the d^2 system"))
    for i in range(n_a):
        labels = (f"b{i}", f"bt{i}") + tuple(l for j in range(n_b) for l in (f"B{i}{j}", f"b{i}{j}"))
        prog.add(Measure("B", bob.povm(labels), f"j{i}", note=f"POVM^{i}"))
    prog.add(PostSelect("A", post_effect, ("A",), note="post-selection <Phi|"))
    prog.add(Send("A", "B", "i", port_bits(n_a)))
    prog.add(Send("A", "B", "accept", 1))
    return prog


def pbt_prepost(
    pre: StateVector,
    post_effect,
    n_a: int,
    n_b: int,
    d: Optional[int] = None,
    script: Optional[ExperimentScript] = None,
    mode: str = "exact",
    seed=None,
    trials: int = 10_000,
    cap: Optional[int] = None,
) -> RunRecord:
    """Port-based teleportation of a pre- and post-selected system.

    The result reports script statistics in port ``(i, j(i))``, where ``i`` is
    Alice's outcome and ``j(i)`` the outcome of Bob's ``i``-th POVM.
    """
    d = d or pre.layout.dims[0]
    if pre.layout.dims != (d,):
        raise InvalidDimension("pre-selection must be a single d-dimensional system")
    post_effect = np.asarray(post_effect, dtype=complex)
    if post_effect.shape != (d,) or np.linalg.norm(post_effect) < en.EPS_ZERO:
        raise PostSelectionImpossible("post-selection must be a nonzero vector of length d")
    _check_cap((d * d) ** (n_a + 1), cap)
    _check_cap((d * d) ** (n_b + 1), cap)
    total = d ** (3 + 4 * n_a + 2 * n_a * n_b)
    if total > memory_cap(cap):
        raise ResourceLimit(f"global state of dimension {total} exceeds the cap")
    script = script or ExperimentScript()
    prog = pbt_prepost_program(pre.normalized(), post_effect, n_a, n_b, script)
    validate_dependencies(prog.events())
    nm = script.n_measurements

    def stat(o):
        i = o["i"]
        return script_outcome(o, nm, prefix=f"s{i}_{o[f'j{i}']}_")

    extra = {}
    if mode == "exact":
        acc, cond = _heralded_summary(list(prog.enumerate()), stat)
    else:
        acc, cond, counts = _sampled_summary(prog.sample(trials, seed), stat)
        extra["conditional_counts"] = counts
    led = prog.ledger()
    led.ports = n_a + n_a * n_b
    return RunRecord(
        protocol="pbt-prepost",
        params={
            "dim": d,
            "ports": n_a,
            "ports_b": n_b,
            "trials": trials if mode == "sampled" else None,
            "seed": seed,
            "mode": mode,
        },
        events=prog.events(),
        messages=prog.messages(),
        outcomes=outcome_table(cond),
        conditional_statistics=cond,
        acceptance_probability=acc,
        post_selection_succeeded=acc > 0,
        ledger=led,
        extra=extra,
    )


def port_branch_states(script: ExperimentScript, d: int, system="S") -> dict:
    """Density of a reconstruction port ``|Phi+>_{Bb}`` after the script on B,
    keyed by script outcome (unnormalized, weights = outcome probabilities)."""
    pair = en.maximally_entangled(d, (system, "_ref"))
    tsv = TwoStateVector(pair, np.eye(d * d))
    branches = orc.branch_operators(tsv, script)
    return {orc.outcome_key(k): v for k, v in branches.items()}


def prepost_channel_oracle(pre: StateVector, post_effect, n_a: int, n_b: int, script: ExperimentScript) -> tuple:
    """Heralded statistics of the pre+post PBT pipeline by channel composition.

    The pre-selection ``|Phi*>|Psi>`` (with Alice's acceptance weight ``1/d``)
    is written down directly, pushed through Alice's heralded port channel via
    its Choi matrix, and paired with Bob's ``i``-th POVM against the port
    densities produced by the script.  Returns ``(acceptance, conditional)``.
    """
    d = pre.layout.dims[0]
    src = pre.layout.labels[0]
    phi = np.asarray(post_effect, dtype=complex)
    phi = phi / np.linalg.norm(phi)
    psi = pre.normalized().amplitudes
    chi = np.kron(phi.conj(), psi)
    rho = np.outer(chi, chi.conj()) / d
    alice = build_pgm(n_a, d * d)
    bob = build_pgm(n_b, d * d)
    branches = port_branch_states(script, d, src)
    marginal = sum(branches.values())
    bob_elems = [e.dense() for e in bob.elements]
    weights: dict = {}
    for i in range(n_a):
        tau = alice.apply_heralded(i, rho)
        for j in range(n_b):
            for key, br in branches.items():
                ports = [br if jj == j else marginal for jj in range(n_b)]
                omega = tau
                for p in ports:
                    omega = np.kron(omega, p)
                w = float(np.sum(bob_elems[j] * omega.T).real)
                weights[key] = weights.get(key, 0.0) + w
    acc = sum(weights.values())
    return acc, distribution(weights)
