"""
Instantaneous non-local computation on two pre- and post-selected systems.

Alice holds ``<Phi|_A |Psi>_A`` and Bob ``<Omega|_B |Upsilon>_B`` (or the two
share an entangled pre-selection and a joint post-selection).  Both states
are gathered on Alice's side as a four-system pre-selection, port-based
teleported to Bob as one ``d^4``-dimensional system, turned back into a
post-selected form with a second round of port-based POVMs, and
reconstructed in every port pair ``(i, j)``, where Bob applies ``joint_op``.
No quantum operation of either party waits for a message from the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Union

import numpy as np

from . import engine as en
from . import oracle as orc
from .engine import PovmSet, StateVector, SubsystemLayout, UnitaryOp
from .errors import InvalidDimension, PostSelectionImpossible, ResourceLimit
from .oracle import ExperimentScript, TwoStateVector
from .portbased import build_pgm, memory_cap
from .runtime import (
    Correct,
    Discard,
    Gate,
    Ledger,
    Measure,
    PostSelect,
    Prepare,
    Program,
    RunRecord,
    Send,
    bell_bits,
    distribution,
    outcome_table,
    port_bits,
    quantum_events,
    script_outcome,
    script_steps,
    validate_causal_independence,
    validate_dependencies,
)

FULL_STATE_LIMIT = 2**22
SLOTS = ("A", "B")


@dataclass(frozen=True)
class BipartiteTwoStateVector:
    """Pre-selection on ``(A, B)`` and a post-selection effect on ``(A, B)``.

    ``alice`` and ``bob`` keep the single-party factors for product states;
    they are ``None`` for entangled pre/post-selections.
    """

    pre: StateVector
    post: np.ndarray
    alice: Optional[TwoStateVector] = None
    bob: Optional[TwoStateVector] = None

    def __post_init__(self):
        if self.pre.layout.labels != SLOTS:
            raise ValueError(f"pre-selection must be on labels {SLOTS}")
        d = self.pre.layout.dims[0]
        if self.pre.layout.dims != (d, d):
            raise InvalidDimension("both parties need systems of the same dimension")
        post = np.asarray(self.post, dtype=complex)
        if post.ndim == 1:
            norm = np.linalg.norm(post)
            if norm < en.EPS_ZERO:
                raise PostSelectionImpossible("post-selection must be nonzero")
            post = np.outer(post, post.conj()) / norm**2
        if post.shape != (d * d, d * d):
            raise InvalidDimension(f"post-selection effect has shape {post.shape}")
        object.__setattr__(self, "pre", self.pre.normalized())
        object.__setattr__(self, "post", post)

    @classmethod
    def product(cls, alice: TwoStateVector, bob: TwoStateVector) -> "BipartiteTwoStateVector":
        a = alice.pre.relabel({alice.layout.labels[0]: "A"})
        b = bob.pre.relabel({bob.layout.labels[0]: "B"})
        if not isinstance(a, StateVector) or not isinstance(b, StateVector):
            raise TypeError("pre-selections must be pure")
        return cls(en.tensor(a, b), np.kron(alice.effect, bob.effect), alice, bob)

    @classmethod
    def joint(cls, pre: StateVector, post) -> "BipartiteTwoStateVector":
        return cls(pre, post)

    @property
    def d(self) -> int:
        return self.pre.layout.dims[0]

    @property
    def is_product(self) -> bool:
        return self.alice is not None and self.bob is not None

    def tsv(self) -> TwoStateVector:
        return TwoStateVector(self.pre, self.post)


def _as_script(joint_op) -> ExperimentScript:
    if isinstance(joint_op, ExperimentScript):
        script = joint_op
    elif isinstance(joint_op, (UnitaryOp, PovmSet)):
        script = ExperimentScript((joint_op,))
    else:
        raise TypeError("joint_op must be a UnitaryOp, PovmSet or ExperimentScript")
    if not set(script.labels) <= set(SLOTS):
        raise ValueError(f"joint_op must act on labels {SLOTS}")
    return script


def _pairs(d: int, left, right) -> StateVector:
    state = None
    for x, y in zip(left, right):
        pair = en.maximally_entangled(d, (x, y))
        state = pair if state is None else en.tensor(state, pair)
    return en.reorder(state, tuple(left) + tuple(right))


def _alice_in() -> tuple:
    return ("A1", "A2", "A3", "A4")


def _port_a(i: int) -> tuple:
    return tuple(f"a{i}_{q}" for q in range(1, 5))


def _port_b(i: int) -> tuple:
    return tuple(f"b{i}_{q}" for q in range(1, 5))


def _recon(i: int, j: int) -> tuple:
    """Bob's reconstruction systems of port ``(i, j)``, in the order they pair
    with ``b^i_1 .. b^i_4``."""
    return (f"B{i}_{j}_1", f"b{i}_{j}_1", f"b{i}_{j}_2", f"B{i}_{j}_2")


def step1_steps(bi: BipartiteTwoStateVector) -> list:
    """Gathering both parties' states on Alice's side (Bell outcome ``k`` stays with Bob)."""
    d = bi.d
    steps = []
    if bi.is_product:
        steps.append(Prepare("A", bi.alice.pre.relabel({bi.alice.layout.labels[0]: "A"}), note="|Psi>_A"))
        steps.append(Prepare("B", bi.bob.pre.relabel({bi.bob.layout.labels[0]: "B"}), note="|Upsilon>_B"))
    else:
        steps.append(Prepare("A", bi.pre, note="joint pre-selection on A B"))
    steps.append(Prepare("A", en.maximally_entangled(d, ("A3", "t")), shared=True, note="pair for Bob's teleport"))
    steps.append(Prepare("A", en.maximally_entangled(d, ("A4", "w")), shared=True, note="pair carrying <Omega|"))
    steps.append(Prepare("A", en.basis_state(SubsystemLayout(("A2",), (d,)), [0]), note="blank A2"))
    steps.append(Gate("A", en.swap_matrix(d), ("A", "A2"), note="swap |Psi> into A2"))
    steps.append(Discard("A", ("A",), note="reset A"))
    steps.append(Prepare("A", en.maximally_entangled(d, ("A", "A1")), pair=True, note="|Phi+>_AA1"))
    steps.append(Gate("B", en.swap_matrix(d), ("B", "w"), note="swap |Upsilon> out of B"))
    steps.append(Measure("B", en.bell_measurement(d, ("w", "t")), "k", note="teleport |Upsilon> to A3 unscrambled"))
    steps.append(Discard("B", ("w", "t")))
    return steps


def post_steps(bi: BipartiteTwoStateVector) -> list:
    d = bi.d
    if bi.is_product:
        return [
            PostSelect("A", bi.alice.post if bi.alice.post.ndim == 1 else bi.alice.effect, ("A",), "accept_a"),
            PostSelect("B", bi.bob.post if bi.bob.post.ndim == 1 else bi.bob.effect, ("B",), "accept_b"),
        ]
    return [PostSelect("A", bi.post, ("A", "B"), "accept", note="joint post-selection on A B")]


def nonlocal_program(bi: BipartiteTwoStateVector, joint_op, n: int) -> Program:
    """The complete protocol in causal order."""
    d = bi.d
    script = _as_script(joint_op)
    pbt = build_pgm(n, d**4)
    prog = Program()
    prog.extend(step1_steps(bi))
    for i in range(n):
        prog.add(Prepare("A", _pairs(d, _port_a(i), _port_b(i)), shared=True, note=f"d^4 port {i}"))
    for i in range(n):
        for j in range(n):
            r = _recon(i, j)
            prog.add(Prepare("B", en.maximally_entangled(d, (r[0], r[1])), pair=True, note=f"port ({i},{j})"))
            prog.add(Prepare("B", en.maximally_entangled(d, (r[3], r[2])), pair=True, note=f"port ({i},{j})"))
    for i in range(n):
        for j in range(n):
            r = _recon(i, j)
            prog.extend(script_steps(script, {"A": r[0], "B": r[3]}, "B", prefix=f"s{i}_{j}_"))
    labels = _alice_in() + tuple(l for i in range(n) for l in _port_a(i))
    prog.add(Measure("A", pbt.structured_povm(labels), "i", note="PBT of the d^4 system"))
    for i in range(n):
        prog.add(Correct("B", en.correction_matrices(d), (f"b{i}_3",), "k", note="unscramble |Upsilon>"))
    for i in range(n):
        labels = _port_b(i) + tuple(l for j in range(n) for l in _recon(i, j))
        prog.add(Measure("B", pbt.structured_povm(labels), f"j{i}", note=f"POVM^{i}"))
    prog.extend(post_steps(bi))
    prog.add(Send("A", "B", "i", port_bits(n)))
    if bi.is_product:
        prog.add(Send("A", "B", "accept_a", 1))
        prog.add(Send("B", "A", "accept_b", 1))
    else:
        prog.add(Send("A", "B", "accept", 1))
    return prog


def messages_last(events: list) -> list:
    """The same events with every classical message moved after all quantum events."""
    sends = [e for e in events if e.kind == "send"]
    rest = [e for e in events if e.kind != "send"]
    return [replace(e, t=t) for t, e in enumerate(rest + sends)]


def check_causality(events: list) -> bool:
    """Quantum events never wait for the other party and are unchanged when
    the messages arrive only after all of them."""
    validate_dependencies(events)
    validate_causal_independence(events)
    return quantum_events(events) == quantum_events(messages_last(events))


# --------------------------------------------------------------------------
# staged evaluation


def _step1_densities(bi: BipartiteTwoStateVector) -> dict:
    """Unnormalized accepted state on ``A1..A4`` for each Bell outcome ``k``.

    The post-selections act on systems untouched by everything in between,
    so they are applied right after step 1 here."""
    prog = Program()
    prog.extend(step1_steps(bi))
    prog.extend(post_steps(bi))
    out: dict = {}
    for leaf in prog.enumerate():
        if not leaf.accepted:
            continue
        rho = en.partial_trace(leaf.state, _alice_in()).matrix
        k = leaf.outcomes["k"]
        out[k] = out.get(k, 0) + rho
    return out


def _port_branches(script: ExperimentScript, d: int) -> dict:
    """Reconstruction-port density on ``(B1, b1, b2, B2)`` per joint-op outcome."""
    r = ("R1", "r1", "r2", "R2")
    pairs = en.reorder(
        en.tensor(en.maximally_entangled(d, ("R1", "r1")), en.maximally_entangled(d, ("R2", "r2"))), r
    )
    tsv = TwoStateVector(pairs, np.eye(d**4))
    branches = orc.branch_operators(tsv, script.relabel({"A": "R1", "B": "R2"}))
    return {orc.outcome_key(k): v for k, v in branches.items()}


def _structured_weight(element, tau, ports) -> float:
    """``tr(E (tau ⊗ ports[0] ⊗ ...))`` for a low-rank POVM element."""
    m = element.basis
    dc = tau.shape[0]
    factors = [tau] + list(ports)
    t = m.reshape([dc] * len(factors) + [m.shape[1]])
    for ax, f in enumerate(factors):
        t = np.moveaxis(np.tensordot(f, t, axes=([1], [ax])), 0, ax)
    y = t.reshape(m.shape)
    trace = np.prod([np.trace(f) for f in factors])
    return float((element.scalar * trace + np.trace(element.core @ (m.conj().T @ y))).real)


def staged_weights(bi: BipartiteTwoStateVector, script: ExperimentScript, n: int) -> tuple:
    """Unnormalized heralded weights per joint-op outcome and the acceptance."""
    d = bi.d
    pbt = build_pgm(n, d**4)
    step1 = _step1_densities(bi)
    acc = float(sum(np.trace(r).real for r in step1.values()))
    branches = _port_branches(script, d)
    marginal = sum(branches.values())
    layout = SubsystemLayout(("1", "2", "3", "4"), (d,) * 4)
    fix = [en.embed(c, layout, ("3",)) for c in en.correction_matrices(d)]
    weights: dict = {}
    for k, rho in step1.items():
        for i in range(n):
            tau = pbt.apply_heralded(i, rho)
            tau = fix[k] @ tau @ fix[k].conj().T
            for j in range(n):
                for key, br in branches.items():
                    ports = [br if jj == j else marginal for jj in range(n)]
                    w = _structured_weight(pbt.elements[j], tau, ports)
                    weights[key] = weights.get(key, 0.0) + w
    return weights, acc


# --------------------------------------------------------------------------
# composed-channel oracle


def dense_pgm(n: int, dc: int, cap: Optional[int] = None) -> tuple:
    """Pretty-good measurement built densely from the signal states.

    ``Pi_i = rho^(-1/2) sigma_i rho^(-1/2) + (1 - P)/n`` with ``sigma_i`` the
    maximally entangled projector on (input, port ``i``) times the identity,
    ``rho = sum_i sigma_i`` and ``P`` its support projector.
    """
    dim = dc ** (n + 1)
    if dim * dim > memory_cap(cap):
        raise ResourceLimit(f"dense POVM of dimension {dim}")
    return _dense_pgm(n, dc)


@lru_cache(maxsize=1)
def _dense_pgm(n: int, dc: int) -> tuple:
    dim = dc ** (n + 1)
    # every signal is real in the computational basis, so real arithmetic suffices
    phi = np.eye(dc).reshape(-1) / math.sqrt(dc)
    first = np.kron(np.outer(phi, phi), np.eye(dc ** (n - 1))).reshape([dc] * (2 * n + 2))
    sigmas = []
    for i in range(n):
        # move port 0 of the first signal to port i
        perm = list(range(n + 1))
        perm[1], perm[i + 1] = perm[i + 1], perm[1]
        axes = perm + [n + 1 + a for a in perm]
        sigmas.append(np.transpose(first, axes).reshape(dim, dim))
    w, v = np.linalg.eigh(sum(sigmas))
    keep = w > 1e-12
    inv = (v[:, keep] / np.sqrt(w[keep])) @ v[:, keep].T
    resid = (np.eye(dim) - v[:, keep] @ v[:, keep].T) / n
    return tuple(inv @ s @ inv + resid for s in sigmas)


def _herald_dense(pi: np.ndarray, i: int, n: int, dc: int, rho: np.ndarray) -> np.ndarray:
    """Port-``i`` output of PBT with ``|Phi+>`` ports, from the dense element."""
    t = pi.reshape([dc] * (2 * n + 2))
    rows = [0] + list(range(1, n + 1))
    cols = [n + 1] + list(range(n + 2, 2 * n + 2))
    # trace out the input against rho and the other ports against each other
    t = np.tensordot(t, rho, axes=([cols[0], rows[0]], [0, 1]))
    letters = "abcdefghijklmnopqrstuvwxyz"
    sub_rows = [letters[q] for q in range(n)]
    sub_cols = [letters[n + q] for q in range(n)]
    for q in range(n):
        if q != i:
            sub_cols[q] = sub_rows[q]
    expr = "".join(sub_rows) + "".join(sub_cols) + "->" + sub_rows[i] + sub_cols[i]
    q = np.einsum(expr, t)
    return q.T / dc**n


def _dense_weight(pi: np.ndarray, tau: np.ndarray, ports) -> float:
    """``tr(Pi (tau ⊗ ports[0] ⊗ ...))`` by contracting each factor in turn."""
    factors = [tau] + list(ports)
    k = len(factors)
    dc = tau.shape[0]
    t = pi.reshape([dc] * (2 * k))
    for f in factors:
        # t[a, rest, a', rest'] contracted with f[a', a]; both leading axes go
        t = np.tensordot(t, f, axes=([0, t.ndim // 2], [1, 0]))
    return float(np.real(t))


def oracle_weights(bi: BipartiteTwoStateVector, script: ExperimentScript, n: int, cap: Optional[int] = None) -> tuple:
    """Heralded weights by composing channels written down directly.

    Step 1 leaves ``(E^T / d^2)_{A1 A4} ⊗ (1 ⊗ sigma_k^*) |pre><pre| (1 ⊗ sigma_k^T)_{A2 A3}``
    with probability weight ``1/d^2`` per Bell outcome; both port-based stages
    use densely built measurements."""
    d = bi.d
    dc = d**4
    pis = dense_pgm(n, dc, cap)
    ident = np.eye(d)
    eff_t = bi.post.T.reshape(d, d, d, d)
    pre = bi.pre.amplitudes
    branches = _port_branches(script, d)
    marginal = sum(branches.values())
    weights: dict = {}
    acc = 0.0
    for k, s in enumerate(en.weyl_matrices(d)):
        v = np.kron(ident, s.conj()) @ pre
        mid = np.outer(v, v.conj()).reshape(d, d, d, d)
        # axes (A1, A2, A3, A4; A1', A2', A3', A4')
        rho = np.einsum("adeh,bcfg->abcdefgh", eff_t, mid).reshape(dc, dc) / d**4
        acc += float(np.trace(rho).real)
        for i in range(n):
            tau = _herald_dense(pis[i], i, n, dc, rho)
            u = np.kron(np.kron(np.eye(d * d), en.correction_matrices(d)[k]), ident)
            tau = u @ tau @ u.conj().T
            for j in range(n):
                for key, br in branches.items():
                    ports = [br if jj == j else marginal for jj in range(n)]
                    weights[key] = weights.get(key, 0.0) + _dense_weight(pis[j], tau, ports)
    return weights, acc


def ideal_statistics(bi: BipartiteTwoStateVector, joint_op) -> dict:
    """Joint ABL statistics of ``joint_op`` applied directly to ``(A, B)``."""
    return orc.run_direct(bi.tsv(), _as_script(joint_op)).conditional


# --------------------------------------------------------------------------
# runs


def _full_weights(prog: Program, nm: int) -> tuple:
    weights: dict = {}
    total = 0.0
    acc = 0.0
    for leaf in prog.enumerate():
        total += leaf.weight
        if not leaf.accepted:
            continue
        acc += leaf.weight
        i = leaf.outcomes["i"]
        key = script_outcome(leaf.outcomes, nm, prefix=f"s{i}_{leaf.outcomes[f'j{i}']}_")
        weights[key] = weights.get(key, 0.0) + leaf.weight
    return {k: v / total for k, v in weights.items()}, acc / total


def full_dimension(d: int, n: int) -> int:
    return d ** (8 + 8 * n + 4 * n * n)


def instantaneous_nonlocal(
    bi: BipartiteTwoStateVector,
    joint_op,
    n: int,
    mode: str = "exact",
    seed=None,
    trials: int = 10_000,
    method: str = "staged",
    cap: Optional[int] = None,
) -> RunRecord:
    """Run the instantaneous protocol with ``n`` ports in both PBT rounds.

    ``method="staged"`` evaluates the pipeline stage by stage (step-1 branches,
    Alice's heralded port channel, Bob's unscrambling, his POVM against the
    reconstruction ports); ``method="full"`` executes the whole program on one
    global state vector, feasible only for the smallest sizes.  Sampled mode
    draws runs from the exact branch distribution.
    """
    script = _as_script(joint_op)
    d = bi.d
    if (d**4) ** (n + 1) > math.isqrt(memory_cap(cap)):
        raise ResourceLimit(f"d^4 port-based channel with {n} ports exceeds the cap")
    prog = nonlocal_program(bi, script, n)
    events = prog.events()
    if not check_causality(events):
        raise AssertionError("quantum events depend on message timing")
    if method == "full":
        if full_dimension(d, n) > FULL_STATE_LIMIT:
            raise ResourceLimit(f"global state of dimension {full_dimension(d, n)}")
        weights, acc = _full_weights(prog, script.n_measurements)
    elif method == "staged":
        weights, acc = staged_weights(bi, script, n)
    else:
        raise ValueError(f"unknown method {method!r}")
    if acc < en.EPS_ZERO:
        raise PostSelectionImpossible("post-selection never succeeds")
    cond = distribution(weights)
    extra = {"ideal": ideal_statistics(bi, script), "method": method}
    counts = {}
    if mode == "sampled":
        rng = np.random.default_rng(seed)
        accepted = int(rng.binomial(trials, acc))
        if accepted == 0:
            raise PostSelectionImpossible("no run was accepted")
        keys = list(cond)
        draws = rng.multinomial(accepted, [cond[k] for k in keys])
        counts = {k: int(c) for k, c in zip(keys, draws) if c}
        extra["conditional_counts"] = counts
        extra["exact_conditional"] = cond
        cond = {k: c / accepted for k, c in counts.items()}
        acc = accepted / trials
    elif mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    led = prog.ledger()
    led.ports = n + n * n
    return RunRecord(
        protocol="nonlocal",
        params={"dim": d, "ports": n, "trials": trials if mode == "sampled" else None, "seed": seed, "mode": mode},
        events=events,
        messages=prog.messages(),
        outcomes=outcome_table(cond, counts),
        conditional_statistics=cond,
        acceptance_probability=acc,
        post_selection_succeeded=acc > 0,
        ledger=led,
        extra=extra,
    )


def baseline_ebits(n_q: int) -> int:
    """``n * 2^(8n)`` ebits for ``n`` qubits per party (prior protocol, formula only)."""
    return n_q * 2 ** (8 * n_q)


def ledger_report(record: RunRecord, n_q: int) -> Ledger:
    """The record's ledger with the comparison baseline filled in."""
    return replace(record.ledger, baseline=baseline_ebits(n_q))
