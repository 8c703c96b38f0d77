import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from postport import engine as en
from postport.errors import (
    InvalidDimension,
    InvalidIndex,
    LabelClash,
    LabelNotFound,
    PostSelectionImpossible,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(2, 4)


class TestLayout:
    def test_most_significant_first(self):
        layout = en.SubsystemLayout(("A", "B"), (2, 3))
        s = en.basis_state(layout, (1, 2))
        assert np.argmax(np.abs(s.amplitudes)) == 1 * 3 + 2

    def test_duplicate_labels(self):
        with pytest.raises(LabelClash):
            en.SubsystemLayout(("A", "A"), (2, 2))

    def test_bad_dimension(self):
        with pytest.raises(InvalidDimension):
            en.SubsystemLayout(("A",), (1,))

    def test_missing_label(self):
        with pytest.raises(LabelNotFound):
            en.SubsystemLayout(("A",), (2,)).axis("B")

    def test_basis_digit_out_of_range(self):
        with pytest.raises(InvalidIndex):
            en.basis_state(en.SubsystemLayout(("A",), (2,)), (2,))

    def test_amplitude_count_checked(self):
        with pytest.raises(InvalidDimension):
            en.StateVector(en.SubsystemLayout(("A",), (2,)), np.ones(3))


class TestOperators:
    @given(dims)
    def test_weyl_squares_to_identity_up_to_phase(self, d):
        for s in en.weyl_matrices(d):
            m = np.linalg.matrix_power(s, d)
            assert_allclose(np.abs(np.trace(m)), d, atol=1e-10)
            assert_allclose(m / m[0, 0], np.eye(d), atol=1e-10)

    def test_qubit_weyl_matches_pauli_order(self):
        i, z, x, xz = en.weyl_matrices(2)
        assert_allclose(i, np.eye(2))
        assert_allclose(z, np.diag([1, -1]))
        assert_allclose(x, [[0, 1], [1, 0]])
        assert_allclose(xz, np.array([[0, 1], [1, 0]]) @ np.diag([1, -1]))

    @given(dims)
    def test_bell_basis_orthonormal(self, d):
        b = np.array(en.bell_vectors(d))
        assert_allclose(b.conj() @ b.T, np.eye(d * d), atol=1e-12)

    def test_nonunitary_rejected(self):
        with pytest.raises(ValueError):
            en.UnitaryOp(np.array([[1, 1], [0, 1]]), ("A",))

    def test_povm_completeness_checked(self):
        with pytest.raises(ValueError):
            en.PovmSet([np.eye(2) / 3, np.eye(2) / 3], ("A",))

    def test_povm_positivity_checked(self):
        with pytest.raises(ValueError):
            en.PovmSet([np.diag([1.5, 0.5]), np.diag([-0.5, 0.5])], ("A",))

    def test_swap(self):
        s = en.tensor(en.ket([1, 0], "A"), en.ket([0, 1], "B"))
        out = en.apply(en.swap(2, "A", "B"), s)
        assert_allclose(out.amplitudes, en.tensor(en.ket([0, 1], "A"), en.ket([1, 0], "B")).amplitudes)


class TestStates:
    @given(dims)
    def test_maximally_entangled_marginal(self, d):
        rho = en.partial_trace(en.maximally_entangled(d), ("A",))
        assert_allclose(rho.matrix, np.eye(d) / d, atol=1e-12)

    @settings(max_examples=30)
    @given(seeds, dims)
    def test_unitary_preserves_norm(self, seed, d):
        rng = np.random.default_rng(seed)
        s = en.ket(en.random_state(d * d, rng), "X").relabel({"X": "AB"})
        layout = en.SubsystemLayout(("A", "B"), (d, d))
        s = en.StateVector(layout, s.amplitudes)
        out = en.apply_matrix(s, en.random_unitary(d, rng), ("B",))
        assert abs(out.norm_tracked - 1) < en.EPS_NORM

    @settings(max_examples=30)
    @given(seeds)
    def test_partial_trace_order(self, seed):
        rng = np.random.default_rng(seed)
        layout = en.SubsystemLayout(("A", "B", "C"), (2, 3, 2))
        s = en.StateVector(layout, en.random_state(12, rng))
        ab = en.partial_trace(s, ("A", "B")).matrix
        ba = en.partial_trace(s, ("B", "A")).matrix
        perm = np.arange(6).reshape(2, 3).T.reshape(-1)
        assert_allclose(ba, ab[np.ix_(perm, perm)], atol=1e-12)

    def test_discard_keeps_product_pure(self):
        s = en.tensor(en.ket([1, 1], "A"), en.ket([1, 0], "B"))
        assert isinstance(en.discard(s, ("B",)), en.StateVector)
        assert isinstance(en.discard(en.maximally_entangled(2), ("B",)), en.DensityOperator)

    def test_fidelity_layout_mismatch(self):
        with pytest.raises(LabelClash):
            en.fidelity(en.ket([1, 0], "A"), en.ket([1, 0], "B"))

    @settings(max_examples=30)
    @given(seeds, dims)
    def test_fidelity_symmetric_and_bounded(self, seed, d):
        rng = np.random.default_rng(seed)
        a = en.ket(en.random_state(d, rng), "A")
        rho = en.DensityOperator(en.SubsystemLayout(("A",), (d,)), np.eye(d) / d)
        f = en.fidelity(a, rho)
        assert_allclose(f, en.fidelity(rho, a))
        assert_allclose(f, 1 / d, atol=1e-12)


class TestMeasurement:
    def test_bell_outcomes_uniform_on_product(self):
        s = en.tensor(en.ket([1, 0], "A"), en.ket([1, 0], "B"))
        p = en.born_probabilities(s, en.bell_measurement(2, ("A", "B")))
        assert_allclose(p, [0.5, 0.5, 0, 0], atol=1e-12)

    @settings(max_examples=30)
    @given(seeds)
    def test_sampled_state_consistent(self, seed):
        s = en.ket([1, 1], "A")
        res = en.sample_outcome(s, en.computational_measurement(2, "A"), seed)
        assert_allclose(np.abs(res.state.amplitudes[res.outcome]), 1)
        assert_allclose(res.probability, 0.5)

    @settings(max_examples=30)
    @given(seeds, dims)
    def test_post_select_probability_is_born(self, seed, d):
        rng = np.random.default_rng(seed)
        layout = en.SubsystemLayout(("A", "B"), (d, d))
        s = en.StateVector(layout, en.random_state(d * d, rng))
        phi = en.random_state(d, rng)
        res = en.post_select(s, phi, ("A",))
        povm = en.projective_measurement(
            np.linalg.qr(np.column_stack([phi, rng.normal(size=(d, d - 1))]))[0], "A"
        )
        born = en.born_probabilities(s, povm)[0]
        assert abs(res.probability - born) < en.EPS_NORM
        assert_allclose(res.amplitude.norm_tracked, res.probability, atol=1e-12)

    def test_transpose_trick(self):
        d = 3
        phi = np.array([1, 2j, -1]) / np.sqrt(6)
        res = en.contract_bra(en.maximally_entangled(d, ("A", "A1")), phi, ("A",))
        assert_allclose(res.amplitudes, phi.conj() / np.sqrt(d), atol=1e-12)

    def test_zero_probability_post_selection(self):
        with pytest.raises(PostSelectionImpossible):
            en.post_select(en.ket([1, 0], "A"), np.array([0, 1]), ("A",))

    def test_effect_keeps_labels(self):
        res = en.post_select(en.maximally_entangled(2), np.diag([1.0, 0, 0, 0]), ("A", "B"))
        assert res.state.layout.labels == ("A", "B")
        assert_allclose(res.probability, 0.5)
