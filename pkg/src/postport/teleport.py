"""
Standard, post-selected and pre+post-selected teleportation.

Each protocol is laid out as a :class:`~postport.runtime.Program` whose steps
mirror the physical choreography, so the same object is executed and audited.
The teleported system of the input is its first subsystem; any further
subsystems are carried along untouched (purifications, entangled partners).
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import engine as en
from .engine import DensityOperator, StateVector
from .oracle import ExperimentScript
from .runtime import (
    Correct,
    Discard,
    Gate,
    Measure,
    PostSelect,
    Prepare,
    Program,
    RunRecord,
    Send,
    bell_bits,
    distribution,
    outcome_table,
    script_outcome,
    script_steps,
    validate_dependencies,
    validate_order,
)

DEFAULT_TRIALS = 10_000


def _summarize(program: Program, mode: str, trials: int, seed, n_script: int, herald: str) -> dict:
    """Shared exact/sampled bookkeeping: herald distribution, acceptance and
    script statistics conditioned on acceptance."""
    if mode == "exact":
        leaves = list(program.enumerate())
        total = sum(l.weight for l in leaves)
        herald_w: dict = {}
        cond_w: dict = {}
        acc = 0.0
        for leaf in leaves:
            h = str(leaf.outcomes.get(herald))
            herald_w[h] = herald_w.get(h, 0.0) + leaf.weight / total
            if leaf.accepted:
                acc += leaf.weight / total
                k = script_outcome(leaf.outcomes, n_script)
                cond_w[k] = cond_w.get(k, 0.0) + leaf.weight
        return {
            "outcomes": outcome_table(dict(sorted(herald_w.items()))),
            "conditional": distribution(cond_w),
            "acceptance": acc,
            "leaves": leaves,
        }
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    runs = program.sample(trials, seed)
    herald_c: dict = {}
    cond_c: dict = {}
    accepted = 0
    for o in runs:
        h = str(o.get(herald))
        herald_c[h] = herald_c.get(h, 0) + 1
        if all(v == 1 for k, v in o.items() if k.startswith("accept")) and o.get(herald) is not None:
            accepted += 1
            k = script_outcome(o, n_script)
            cond_c[k] = cond_c.get(k, 0) + 1
    return {
        "outcomes": outcome_table({k: v / trials for k, v in sorted(herald_c.items())}, herald_c),
        "conditional": distribution(cond_c) if accepted else {},
        "acceptance": accepted / trials,
        "counts": dict(sorted(cond_c.items())),
        "accepted": accepted,
    }


def _input_labels(state) -> tuple:
    return state.layout.labels


def _record(name, program, params, summary, fidelity=None, extra=None) -> RunRecord:
    rec = RunRecord(
        protocol=name,
        params=params,
        events=program.events(),
        messages=program.messages(),
        outcomes=summary["outcomes"],
        conditional_statistics=summary["conditional"],
        acceptance_probability=float(summary["acceptance"]),
        post_selection_succeeded=summary["acceptance"] > 0,
        fidelity=fidelity,
        ledger=program.ledger(),
        extra=extra or {},
    )
    if "counts" in summary:
        rec.extra["accepted_runs"] = summary["accepted"]
        rec.extra["conditional_counts"] = summary["counts"]
    return rec


# --------------------------------------------------------------------------
# pre-selected


def pre_program(psi, script: Optional[ExperimentScript] = None) -> Program:
    labels = _input_labels(psi)
    d = psi.layout.dims[0]
    src = labels[0]
    script = script or ExperimentScript()
    prog = Program()
    prog.add(Prepare("A", psi.relabel({src: "A"}), note="input state"))
    prog.add(Prepare("A", en.maximally_entangled(d, ("a", "B")), shared=True, note="|Phi+>_aB"))
    prog.add(Measure("A", en.bell_measurement(d, ("A", "a")), "i", note="Bell measurement"))
    prog.add(Send("A", "B", "i", bell_bits(d)))
    prog.add(Correct("B", en.correction_matrices(d), ("B",), "i", note="undo sigma_i"))
    prog.extend(script_steps(script, {src: "B"}, "B"))
    return prog


def teleport_pre(
    psi,
    d: Optional[int] = None,
    script: Optional[ExperimentScript] = None,
    mode: str = "exact",
    seed=None,
    trials: int = DEFAULT_TRIALS,
) -> RunRecord:
    """Teleport the first subsystem of ``psi`` from Alice to Bob.

    In exact mode the record's ``fidelity`` is the minimum over Bell outcomes
    of the fidelity between Bob's corrected system (with any spectators) and
    the input.
    """
    d = d or psi.layout.dims[0]
    if psi.layout.dims[0] != d:
        raise en.InvalidDimension(f"input has dimension {psi.layout.dims[0]}, expected {d}")
    script = script or ExperimentScript()
    prog = pre_program(psi, script)
    validate_dependencies(prog.events())
    summary = _summarize(prog, mode, trials, seed, script.n_measurements, "i")
    fid = None
    extra = {}
    if mode == "exact":
        src = psi.layout.labels[0]
        target = psi.relabel({src: "B"})
        keep = ("B",) + psi.layout.labels[1:]
        per = {}
        for leaf in pre_program(psi).enumerate():
            out = en.partial_trace(leaf.state, keep).normalized()
            ref = target if isinstance(target, DensityOperator) else target
            per[str(leaf.outcomes["i"])] = en.fidelity(out, ref)
        fid = min(per.values())
        extra["fidelity_by_outcome"] = dict(sorted(per.items()))
    params = {"dim": d, "ports": None, "trials": trials if mode == "sampled" else None, "seed": seed, "mode": mode}
    return _record("teleport-pre", prog, params, summary, fid, extra)


# --------------------------------------------------------------------------
# post-selected


def post_program(post_effect, d: int, script: Optional[ExperimentScript] = None, system="S") -> Program:
    script = script or ExperimentScript()
    prog = Program()
    prog.add(Prepare("B", en.maximally_mixed(d, "B"), note="totally uncertain pre-selection 1/d"))
    prog.add(Prepare("A", en.maximally_entangled(d, ("A", "b")), shared=True, note="|Phi+>_Ab"))
    prog.extend(script_steps(script, {system: "B"}, "B"))
    prog.add(Measure("B", en.bell_measurement(d, ("B", "b")), "i", note="Bell measurement after experiment"))
    prog.add(Send("B", "A", "i", bell_bits(d)))
    prog.add(Correct("A", en.correction_matrices(d), ("A",), "i", note="undo sigma_i"))
    prog.add(PostSelect("A", post_effect, ("A",), note="post-selection <Phi|"))
    return prog


def validate_post_order(events) -> None:
    validate_dependencies(events)
    validate_order(
        events,
        lambda e: e.kind == "script",
        lambda e: e.kind == "measure" and e.key == "i",
        "experiment must finish before Bob's Bell measurement",
    )


def teleport_post(
    post_effect,
    d: int,
    script: Optional[ExperimentScript] = None,
    mode: str = "exact",
    seed=None,
    trials: int = DEFAULT_TRIALS,
    system="S",
) -> RunRecord:
    """Teleport a post-selection ``<Phi|`` from Alice's system to Bob's.

    Bob runs ``script`` (written on label ``system``) on his maximally mixed
    system, then Bell-measures it with his half of the shared pair and sends
    the outcome to Alice, who corrects and post-selects.
    """
    post_effect = np.asarray(post_effect, dtype=complex)
    if post_effect.shape != (d,):
        raise en.InvalidDimension(f"post-selection of length {post_effect.shape} for d={d}")
    if np.linalg.norm(post_effect) < en.EPS_ZERO:
        raise ValueError("post-selection must be nonzero")
    script = script or ExperimentScript()
    prog = post_program(post_effect, d, script, system)
    validate_post_order(prog.events())
    summary = _summarize(prog, mode, trials, seed, script.n_measurements, "i")
    if summary["acceptance"] <= 0:
        raise en.PostSelectionImpossible("post-selection never succeeded")
    extra = {}
    if mode == "exact":
        extra["amplitude_factor"] = post_chain_factor(post_effect, d)
    params = {"dim": d, "ports": None, "trials": trials if mode == "sampled" else None, "seed": seed, "mode": mode}
    return _record("teleport-post", prog, params, summary, None, extra)


def post_chain_bra(post_effect, d: int, outcome: int) -> np.ndarray:
    """Bra on Bob's system produced by the post-selected chain for one Bell outcome.

    Component ``k`` is the amplitude ``<Phi|_A C_i <bell_i|_Bb |Phi+>_Ab |k>_B``.
    """
    phi = np.asarray(post_effect, dtype=complex)
    phi = phi / np.linalg.norm(phi)
    bell = en.bell_vectors(d)[outcome]
    corr = en.correction_matrices(d)[outcome]
    out = np.zeros(d, dtype=complex)
    pair = en.maximally_entangled(d, ("A", "b"))
    for k in range(d):
        s = en.tensor(pair, en.basis_state(en.SubsystemLayout(("B",), (d,)), [k]))
        s = en.contract_bra(s, bell, ("B", "b"))
        s = en.apply_matrix(s, corr, ("A",))
        out[k] = en.contract_bra(s, phi, ("A",)).amplitudes[0]
    return out


def post_chain_factor(post_effect, d: int) -> float:
    """Common scalar ``c`` with chain bra = ``c <Phi|`` for every Bell outcome."""
    phi = np.asarray(post_effect, dtype=complex)
    phi = phi / np.linalg.norm(phi)
    factors = []
    for i in range(d * d):
        bra = post_chain_bra(phi, d, i)
        j = int(np.argmax(np.abs(phi)))
        c = bra[j] / phi[j].conj()
        if np.max(np.abs(bra - c * phi.conj())) > en.EPS_NORM:
            raise ValueError(f"outcome {i}: chain is not proportional to <Phi|")
        factors.append(c)
    if max(abs(f - factors[0]) for f in factors) > en.EPS_NORM:
        raise ValueError("chain factor depends on the Bell outcome")
    return float(factors[0].real) if abs(factors[0].imag) < en.EPS_NORM else complex(factors[0])


# --------------------------------------------------------------------------
# pre- and post-selected


def prepost_program(pre: StateVector, post_effect, script: Optional[ExperimentScript] = None) -> Program:
    labels = pre.layout.labels
    src, spectators = labels[0], labels[1:]
    d = pre.layout.dims[0]
    script = script or ExperimentScript()
    prog = Program()
    prog.add(Prepare("A", pre.relabel({src: "A"}), note="pre-selected input"))
    prog.add(Prepare("A", en.maximally_entangled(d, ("a", "B")), shared=True, note="|Phi+>_aB"))
    prog.add(Prepare("A", en.maximally_entangled(d, ("at", "b")), shared=True, note="|Phi+>_ãb"))
    prog.add(Measure("A", en.bell_measurement(d, ("A", "a")), "i", note="Bell measurement"))
    prog.add(Send("A", "B", "i", bell_bits(d)))
    prog.add(Correct("B", en.correction_matrices(d), ("B",), "i", note="undo sigma_i"))
    prog.add(Gate("A", en.swap_matrix(d), ("A", "at"), note="Swap(A, ã)"))
    prog.add(Discard("A", ("a", "at"), note="measured Bell pair"))
    prog.extend(script_steps(script, {src: "B"}, "B"))
    prog.add(Measure("B", en.bell_measurement(d, ("B", "b")), "k", note="Bell measurement after experiment"))
    prog.add(Send("B", "A", "k", bell_bits(d)))
    prog.add(Correct("A", en.correction_matrices(d), ("A",), "k", note="undo sigma_k"))
    prog.add(PostSelect("A", post_effect, ("A",) + spectators, note="post-selection <Phi|"))
    return prog


def teleport_prepost(
    pre: StateVector,
    post_effect,
    d: Optional[int] = None,
    script: Optional[ExperimentScript] = None,
    mode: str = "exact",
    seed=None,
    trials: int = DEFAULT_TRIALS,
) -> RunRecord:
    """Teleport a pre- and post-selected system (the first subsystem of ``pre``).

    ``post_effect`` is a bra over the full layout of ``pre``; any spectator
    subsystems stay where they are and take part only in the post-selection
    and in scripts that name them.
    """
    d = d or pre.layout.dims[0]
    if pre.layout.dims[0] != d:
        raise en.InvalidDimension(f"input has dimension {pre.layout.dims[0]}, expected {d}")
    post_effect = np.asarray(post_effect, dtype=complex)
    if post_effect.shape != (pre.layout.total,):
        raise en.InvalidDimension("post-selection must cover the layout of the pre-selection")
    if np.linalg.norm(post_effect) < en.EPS_ZERO:
        raise ValueError("post-selection must be nonzero")
    script = script or ExperimentScript()
    prog = prepost_program(pre.normalized(), post_effect, script)
    events = prog.events()
    validate_dependencies(events)
    validate_order(
        events,
        lambda e: e.kind == "script",
        lambda e: e.kind == "measure" and e.key == "k",
        "experiment must finish before Bob's Bell measurement",
    )
    summary = _summarize(prog, mode, trials, seed, script.n_measurements, "i")
    if mode == "exact" and summary["acceptance"] < en.EPS_ZERO:
        raise en.PostSelectionImpossible("pre- and post-selection are incompatible")
    params = {"dim": d, "ports": None, "trials": trials if mode == "sampled" else None, "seed": seed, "mode": mode}
    return _record("teleport-prepost", prog, params, summary)
