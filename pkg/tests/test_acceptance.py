"""One test per acceptance criterion, each printing a PASS/FAIL line."""

import json
import time
from contextlib import contextmanager
from math import sqrt

import numpy as np

from conftest import CRITERIA_LINES
from postport import appendix as ap
from postport import engine as en
from postport import nonlocal_compute as nl
from postport import oracle as orc
from postport import portbased as pb
from postport import teleport as tp


class Checks:
    def __init__(self):
        self.failed = []

    def __call__(self, ok, what):
        if not ok:
            self.failed.append(what)


@contextmanager
def criterion(number, title, limit):
    checks = Checks()
    start = time.perf_counter()
    try:
        yield checks
    except Exception as e:
        checks.failed.append(f"{type(e).__name__}: {e}")
    elapsed = time.perf_counter() - start
    checks(elapsed < limit, f"runtime {elapsed:.1f}s over {limit}s")
    status = "PASS" if not checks.failed else "FAIL"
    line = f"criterion {number}: {status}  {title} ({elapsed:.2f}s)"
    if checks.failed:
        line += " -- " + "; ".join(checks.failed[:3])
    CRITERIA_LINES.append(line)
    print(line)
    assert not checks.failed, line


def tv_distance(a, b):
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))


def max_diff(a, b):
    return max(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))


def within_binomial(count, n, p, sigmas=5.0):
    return abs(count / n - p) <= sigmas * sqrt(max(p * (1 - p), 1e-300) / n) + 1e-15


def dumps(record):
    return json.dumps(record.to_dict(), sort_keys=True)


def test_criterion_1_teleportation_exact():
    with criterion(1, "teleportation of 100 random qubit states", 1.0) as check:
        rng = np.random.default_rng(101)
        for _ in range(100):
            rec = tp.teleport_pre(en.ket(en.random_state(2, rng), "S"))
            check(abs(rec.fidelity - 1) <= 1e-10, f"fidelity {rec.fidelity}")
            probs = [o["probability"] for o in rec.outcomes]
            check(len(probs) == 4 and max(abs(p - 0.25) for p in probs) <= 1e-12, f"Bell outcomes {probs}")


def test_criterion_2_post_selected_teleportation():
    with criterion(2, "post-selected teleportation equals the ABL oracle", 30.0) as check:
        rng = np.random.default_rng(202)
        cases = 0
        for d in (2, 3, 4):
            for _ in range(20):
                post = en.random_state(d, rng)
                script = orc.random_script(d, rng)
                rec = tp.teleport_post(post, d, script)
                direct = orc.run_direct(orc.TwoStateVector(en.maximally_mixed(d, "S"), post), script)
                check(max_diff(rec.conditional_statistics, direct.conditional) <= 1e-9, f"d={d} statistics")
                check(abs(rec.acceptance_probability - direct.acceptance) <= 1e-9, f"d={d} acceptance")
                check(all((m.sender, m.receiver) == ("B", "A") for m in rec.messages), "message direction")
                cases += 1
        check(cases >= 50, f"only {cases} cases")
        factor = tp.post_chain_factor(en.random_state(2, rng), 2)
        check(factor == 0.5 or abs(factor - 0.5) <= 1e-15, f"amplitude factor {factor}")


def test_criterion_3_pre_post_teleportation():
    with criterion(3, "pre+post teleportation equals the ABL oracle", 30.0) as check:
        rng = np.random.default_rng(303)
        for d in (2, 3, 4):
            for _ in range(20):
                pre = en.ket(en.random_state(d, rng), "S")
                post = en.random_state(d, rng)
                script = orc.random_script(d, rng)
                rec = tp.teleport_prepost(pre, post, script=script)
                direct = orc.run_direct(orc.TwoStateVector(pre, post), script)
                check(max_diff(rec.conditional_statistics, direct.conditional) <= 1e-9, f"d={d} statistics")
        for d in (2, 3):
            layout = en.SubsystemLayout(("S", "T"), (d, d))
            pre = en.StateVector(layout, en.random_state(d * d, rng))
            post = en.random_state(d * d, rng)
            script = orc.ExperimentScript(orc.random_script(d, rng).steps + orc.bell_verify(d).steps)
            rec = tp.teleport_prepost(pre, post, script=script)
            direct = orc.run_direct(orc.TwoStateVector(pre, post), script)
            check(max_diff(rec.conditional_statistics, direct.conditional) <= 1e-9, f"entangled d={d}")


def test_criterion_4_pgm_and_convergence():
    with criterion(4, "PGM validity and port-based convergence", 120.0) as check:
        fe, fid = [], []
        for n in range(1, 7):
            ch = pb.build_pgm(n, 2)
            check(ch.completeness_error() <= 1e-8, f"n={n} completeness {ch.completeness_error()}")
            check(ch.min_eigenvalue() >= -1e-8, f"n={n} min eigenvalue {ch.min_eigenvalue()}")
            fe.append(ch.entanglement_fidelity())
            fid.append(ch.average_fidelity())
        check(all(b > a for a, b in zip(fid, fid[1:])), f"fidelity not increasing {fid}")
        c = max(n * (1 - fe[n - 1]) for n in (1, 2, 3))
        check(all(1 - fe[n - 1] <= c / n + 1e-12 for n in (4, 5, 6)), f"1-F(n) exceeds {c:.3f}/n")
        rng = np.random.default_rng(404)
        for n in range(1, 7):
            ch = pb.pbt_probabilistic(n, 2)
            check(ch.completeness_error() <= 1e-8 and ch.min_eigenvalue() >= -1e-8, f"probabilistic n={n} POVM")
            rec = pb.pbt_teleport(ch, en.ket(en.random_state(2, rng), "S")).record
            check(abs(rec.fidelity - 1) <= 1e-9, f"probabilistic n={n} fidelity {rec.fidelity}")


def test_criterion_5_post_selected_pbt():
    with criterion(5, "post-selected port-based teleportation", 120.0) as check:
        rng = np.random.default_rng(505)
        cases = [(np.array([1, 0]), orc.z_measure(2), 2)]
        cases += [(en.random_state(2, rng), orc.random_script(2, rng), 2) for _ in range(4)]
        cases += [(en.random_state(3, rng), orc.random_script(3, rng, max_steps=2), 3) for _ in range(2)]
        for post, script, d in cases:
            ideal = orc.run_direct(orc.TwoStateVector(en.maximally_mixed(d, "S"), post), script).conditional
            tv = []
            for n in (1, 2, 3):
                rec = pb.pbt_post_selected(post, n, d, script)
                check(abs(rec.acceptance_probability - 1 / d) <= 1e-10, f"d={d} n={n} acceptance")
                tv.append(tv_distance(rec.conditional_statistics, ideal))
            check(all(b <= a + 1e-12 for a, b in zip(tv, tv[1:])), f"d={d} TV not monotone {tv}")


def test_criterion_6_pre_post_pbt():
    with criterion(6, "pre+post port-based teleportation", 300.0) as check:
        rng = np.random.default_rng(606)
        for _ in range(5):
            psi, phi = en.random_state(2, rng), en.random_state(2, rng)
            _, state = pb.step1_state(en.ket(psi, "S"), phi)
            target = en.StateVector(en.SubsystemLayout(("A1", "A2"), (2, 2)), np.kron(phi.conj(), psi))
            check(abs(en.fidelity(state, target) - 1) <= 1e-10, "step-1 fidelity")
        cases = [(en.ket([1, 0], "S"), np.array([1, 0]), orc.z_measure(2))]
        cases.append((en.ket(en.random_state(2, rng), "S"), en.random_state(2, rng), orc.random_script(2, rng, max_steps=1)))
        for pre, post, script in cases:
            rec = pb.pbt_prepost(pre, post, 2, 2, script=script)
            acc, cond = pb.prepost_channel_oracle(pre, post, 2, 2, script)
            check(abs(rec.acceptance_probability - acc) <= 1e-9, "acceptance")
            check(max_diff(rec.conditional_statistics, cond) <= 1e-9, "heralded statistics")


def test_criterion_7_instantaneous_nonlocal():
    with criterion(7, "instantaneous non-local measurement", 600.0) as check:
        rng = np.random.default_rng(707)
        bell = orc.bell_verify(2, nl.SLOTS)
        product = nl.BipartiteTwoStateVector.product(
            orc.TwoStateVector(en.ket([1, 0], "S"), np.array([1, 1])),
            orc.TwoStateVector(en.ket([1, 1], "S"), np.array([1, 0])),
        )
        joint = nl.BipartiteTwoStateVector.joint(en.maximally_entangled(2, nl.SLOTS), np.array([1, 0, 0, 1]))
        layout = en.SubsystemLayout(nl.SLOTS, (2, 2))
        random = nl.BipartiteTwoStateVector.joint(en.StateVector(layout, en.random_state(4, rng)), en.random_state(4, rng))
        for name, bi in (("product", product), ("joint", joint), ("random", random)):
            ideal = nl.ideal_statistics(bi, bell)
            tv = []
            for n in (1, 2):
                staged, acc_s = nl.staged_weights(bi, bell, n)
                oracle, acc_o = nl.oracle_weights(bi, bell, n)
                check(abs(acc_s - acc_o) <= 1e-9, f"{name} n={n} acceptance")
                check(max_diff(staged, oracle) <= 1e-9, f"{name} n={n} heralded weights")
                rec = nl.instantaneous_nonlocal(bi, bell, n)
                check(nl.check_causality(rec.events), f"{name} n={n} causality")
                ledger = nl.ledger_report(rec, 1)
                check(ledger.ebits < ledger.baseline, f"{name} n={n} ebits {ledger.ebits}")
                tv.append(tv_distance(rec.conditional_statistics, ideal))
            check(tv[1] <= tv[0] + 1e-12, f"{name} TV grows {tv}")


def test_criterion_8_appendix():
    with criterion(8, "entanglement and dense-coding optimality constructions", 1.0) as check:
        rec = ap.extract_entanglement(2)
        fids = rec.extra["fidelity_by_branch"]
        check(len(fids) == 16 and min(fids.values()) >= 1 - 1e-10, "Bell pair branches")
        table = ap.decoding_table(2)
        for msg in range(4):
            res = ap.dense_coding_via_postteleport(msg, 2)
            check(res.errors == 0, f"message {msg} decoding errors")
            outcomes = {(k.split(",")[1], k.split(",")[2]) for k in res.decoded}
            check(len(outcomes) == 4, f"message {msg} covers {len(outcomes)} outcome pairs")
            check(all(table[int(m), int(j)] == msg for j, m in outcomes), f"message {msg} table")


def test_criterion_9_sampling_consistency():
    with criterion(9, "sampled mode matches exact mode", 120.0) as check:
        trials = 100_000
        psi = en.ket(np.array([0.6, 0.8j]), "S")
        sampled = tp.teleport_pre(psi, mode="sampled", seed=91, trials=trials)
        for o in sampled.outcomes:
            check(within_binomial(o["count"], trials, 0.25), f"pre outcome {o}")
        check(dumps(sampled) == dumps(tp.teleport_pre(psi, mode="sampled", seed=91, trials=trials)), "pre rerun")

        rng = np.random.default_rng(92)
        post, script = en.random_state(2, rng), orc.random_script(2, rng)
        exact = tp.teleport_post(post, 2, script)
        sampled = tp.teleport_post(post, 2, script, mode="sampled", seed=93, trials=trials)
        accepted = sampled.extra["accepted_runs"]
        check(within_binomial(accepted, trials, exact.acceptance_probability), "post acceptance")
        for k, p in exact.conditional_statistics.items():
            count = sampled.extra["conditional_counts"].get(k, 0)
            check(within_binomial(count, accepted, p), f"post statistic {k}")
        again = tp.teleport_post(post, 2, script, mode="sampled", seed=93, trials=trials)
        check(dumps(sampled) == dumps(again), "post rerun")

        exact = ap.extract_entanglement(2)
        sampled = ap.extract_entanglement(2, "sampled", seed=94, trials=trials)
        counts = {o["label"]: o["count"] for o in sampled.outcomes}
        for k, p in exact.conditional_statistics.items():
            check(within_binomial(counts.get(k, 0), trials, p), f"extraction branch {k}")
        check(sampled.fidelity >= 1 - 1e-10, "extraction fidelity")
        check(dumps(sampled) == dumps(ap.extract_entanglement(2, "sampled", seed=94, trials=trials)), "extraction rerun")

        res = ap.dense_coding_via_postteleport(1, 2, "sampled", seed=95, trials=trials)
        check(res.errors == 0 and res.record.outcomes[0]["count"] == trials, "dense coding sampled")
        check(ap.random_messages(trials, 2, seed=96) == 0, "random messages")
        again = ap.dense_coding_via_postteleport(1, 2, "sampled", seed=95, trials=trials)
        check(dumps(res.record) == dumps(again.record), "dense coding rerun")
