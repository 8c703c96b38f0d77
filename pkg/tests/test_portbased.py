from math import comb, sqrt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from postport import engine as en
from postport import oracle as orc
from postport import portbased as pb
from postport.errors import ResourceLimit

seeds = st.integers(0, 2**32 - 1)


def qubit_entanglement_fidelity(n):
    """Closed form for the qubit PGM channel."""
    s = sum(
        ((n - 2 * k - 1) / sqrt(k + 1) + (n - 2 * k + 1) / sqrt(n - k + 1)) ** 2 * comb(n, k)
        for k in range(n + 1)
    )
    return s / 2 ** (n + 3)


def qubit_probabilistic_success(n):
    """Closed form over two-row Young diagrams: symmetric-group dimension
    ``S(a, b)``, unitary-group dimension ``a - b + 1``."""

    def s_dim(a, b):
        return comb(a + b, b) - (comb(a + b, b - 1) if b else 0)

    total = 0.0
    for b in range((n - 1) // 2 + 1):
        a = n - 1 - b
        children = [(a + 1, b)] + ([(a, b + 1)] if a > b else [])
        ratio = min(s_dim(x, y) / (x - y + 1) for x, y in children)
        total += (a - b + 1) ** 2 * ratio
    return total / 2**n


def brute_force_output(channel, psi, i):
    """Heralded output on port i by explicit state-vector simulation."""
    n, d = channel.n, channel.d
    state = en.ket(psi, "A")
    for k in range(n):
        state = en.tensor(state, en.maximally_entangled(d, (f"a{k}", f"B{k}")))
    labels = ("A",) + tuple(f"a{k}" for k in range(n))
    kraus = en.psd_sqrt(channel.elements[i].dense())
    out = en.apply_matrix(state, kraus, labels)
    return en.partial_trace(out, (f"B{i}",)).matrix


class TestClosedForms:
    @pytest.mark.parametrize("n", range(2, 7))
    def test_entanglement_fidelity(self, n):
        assert_allclose(pb.build_pgm(n, 2).entanglement_fidelity(), qubit_entanglement_fidelity(n), atol=1e-10)

    def test_frozen_reference_values(self):
        assert_allclose(pb.build_pgm(2, 2).entanglement_fidelity(), 0.46650635, atol=1e-8)
        assert_allclose(pb.build_pgm(3, 2).entanglement_fidelity(), 0.625, atol=1e-10)

    @pytest.mark.parametrize("n", range(1, 7))
    def test_probabilistic_success(self, n):
        assert_allclose(pb.pbt_probabilistic(n, 2).success_probability(), qubit_probabilistic_success(n), atol=1e-10)

    def test_probabilistic_reference_values(self):
        got = [pb.pbt_probabilistic(n, 2).success_probability() for n in (1, 2, 3)]
        assert_allclose(got, [1 / 4, 1 / 3, 13 / 32], atol=1e-10)


class TestPovmValidity:
    @pytest.mark.parametrize("n,d", [(1, 2), (2, 2), (3, 2), (4, 2), (2, 3), (3, 3), (2, 4)])
    def test_pgm(self, n, d):
        ch = pb.build_pgm(n, d)
        assert ch.completeness_error() < 1e-8
        assert ch.min_eigenvalue() > -1e-8
        assert_allclose(ch.success_probability(), 1.0, atol=1e-9)

    @pytest.mark.parametrize("n,d", [(1, 2), (2, 2), (3, 2), (4, 2), (2, 3), (3, 3)])
    def test_probabilistic(self, n, d):
        ch = pb.pbt_probabilistic(n, d)
        assert ch.completeness_error() < 1e-8
        assert ch.min_eigenvalue() > -1e-8
        assert ch.outcome_labels[-1] == "fail"

    def test_dense_povm_accepted_by_engine(self):
        povm = pb.build_pgm(2, 2).povm(("A", "a0", "a1"))
        assert len(povm) == 2

    def test_low_rank_operations_match_dense(self):
        rng = np.random.default_rng(0)
        el = pb.build_pgm(3, 2).elements[1]
        x = rng.normal(size=(el.dim, 3)) + 1j * rng.normal(size=(el.dim, 3))
        assert_allclose(el.matmul(x), el.dense() @ x, atol=1e-12)
        rho = x @ x.conj().T
        assert_allclose(el.expect(rho), np.trace(el.dense() @ rho).real, atol=1e-10)
        assert_allclose(el.min_eigenvalue(), np.linalg.eigvalsh(el.dense())[0], atol=1e-10)


class TestChannel:
    @pytest.mark.parametrize("build", [pb.build_pgm, pb.pbt_probabilistic])
    @pytest.mark.parametrize("n,d", [(2, 2), (3, 2), (2, 3)])
    def test_choi_route_matches_state_simulation(self, build, n, d):
        ch = build(n, d)
        rng = np.random.default_rng(n * 10 + d)
        psi = en.random_state(d, rng)
        for i in range(n):
            assert_allclose(ch.apply_heralded(i, np.outer(psi, psi.conj())), brute_force_output(ch, psi, i), atol=1e-10)

    @pytest.mark.parametrize("n,d", [(3, 2), (2, 3)])
    def test_heralded_covariance_across_ports(self, n, d):
        ch = pb.build_pgm(n, d)
        for i in range(1, n):
            assert_allclose(ch.heralded_choi(i), ch.heralded_choi(0), atol=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(seeds, st.integers(2, 4))
    def test_fidelity_independent_of_input(self, seed, n):
        ch = pb.build_pgm(n, 2)
        psi = en.ket(en.random_state(2, np.random.default_rng(seed)), "S")
        rec = pb.pbt_teleport(ch, psi).record
        assert_allclose(rec.fidelity, ch.average_fidelity(), atol=1e-9)

    def test_sampled_counts_and_reproducibility(self):
        ch = pb.pbt_probabilistic(2, 2)
        a = pb.pbt_teleport(ch, en.ket([1, 0], "S"), "sampled", seed=3, trials=4000)
        b = pb.pbt_teleport(ch, en.ket([1, 0], "S"), "sampled", seed=3, trials=4000)
        assert a.record.to_dict() == b.record.to_dict()
        fail = next(o for o in a.record.outcomes if o["label"] == "fail")
        assert abs(fail["count"] / 4000 - 2 / 3) < 5 * sqrt(2 / 9 / 4000)

    def test_wrong_input_dimension(self):
        with pytest.raises(en.InvalidDimension):
            pb.pbt_teleport(pb.build_pgm(2, 2), en.ket([1, 0, 0], "S"))

    def test_resource_limit(self):
        with pytest.raises(ResourceLimit):
            pb.build_pgm(6, 4, cap=2**20)

    def test_cap_from_environment(self, monkeypatch):
        monkeypatch.setenv("SIM_MEMORY_CAP", "1024")
        assert pb.memory_cap() == 1024


class TestPostSelected:
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_heralded_statistics_follow_average_fidelity(self, n):
        rec = pb.pbt_post_selected([1, 0], n, 2, orc.z_measure(2))
        assert_allclose(rec.acceptance_probability, 0.5, atol=1e-10)
        assert_allclose(rec.conditional_statistics["0"], pb.build_pgm(n, 2).average_fidelity(), atol=1e-9)

    def test_three_ports_reference(self):
        rec = pb.pbt_post_selected([1, 0], 3, 2, orc.z_measure(2))
        assert_allclose(rec.conditional_statistics["0"], 0.75, atol=1e-10)

    def test_approaches_abl_with_more_ports(self):
        rng = np.random.default_rng(5)
        post = en.random_state(2, rng)
        script = orc.random_script(2, rng)
        ideal = orc.run_direct(orc.TwoStateVector(en.maximally_mixed(2, "S"), post), script).conditional
        tv = []
        for n in (1, 2, 3):
            got = pb.pbt_post_selected(post, n, 2, script).conditional_statistics
            tv.append(0.5 * sum(abs(got.get(k, 0.0) - p) for k, p in ideal.items()))
        assert tv[0] >= tv[1] - 1e-12 >= tv[2] - 2e-12

    def test_ledger_counts_ports(self):
        rec = pb.pbt_post_selected([1, 0], 2, 2, orc.z_measure(2))
        assert rec.ledger.ports == 2


class TestPrePost:
    def test_step1_prepares_conjugate_times_input(self):
        rng = np.random.default_rng(1)
        psi, phi = en.random_state(2, rng), en.random_state(2, rng)
        amp, state = pb.step1_state(en.ket(psi, "S"), phi)
        assert_allclose(amp, 1 / sqrt(2), atol=1e-12)
        target = en.StateVector(en.SubsystemLayout(("A1", "A2"), (2, 2)), np.kron(phi.conj(), psi))
        assert_allclose(en.fidelity(state, target), 1.0, atol=1e-10)

    @settings(max_examples=5, deadline=None)
    @given(seeds)
    def test_pipeline_matches_channel_composition(self, seed):
        rng = np.random.default_rng(seed)
        pre = en.ket(en.random_state(2, rng), "S")
        post = en.random_state(2, rng)
        script = orc.random_script(2, rng, max_steps=2)
        rec = pb.pbt_prepost(pre, post, 1, 1, script=script)
        acc, cond = pb.prepost_channel_oracle(pre, post, 1, 1, script)
        assert_allclose(rec.acceptance_probability, acc, atol=1e-10)
        for k, p in cond.items():
            assert abs(rec.conditional_statistics.get(k, 0.0) - p) < 1e-9

    def test_global_dimension_capped(self):
        with pytest.raises(ResourceLimit):
            pb.pbt_prepost(en.ket([1, 0], "S"), [1, 0], 2, 2, cap=2**16)

    def test_ledger(self):
        rec = pb.pbt_prepost(en.ket([1, 0], "S"), [1, 0], 1, 2, script=orc.z_measure(2))
        assert rec.ledger.ports == 3


class TestConditionalFidelity:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_probabilistic_is_perfect_on_success(self, n):
        assert_allclose(pb.pbt_probabilistic(n, 2).conditional_fidelity(), 1.0, atol=1e-9)

    def test_deterministic_equals_average(self):
        ch = pb.build_pgm(3, 2)
        assert_allclose(ch.conditional_fidelity(), ch.average_fidelity(), atol=1e-12)
