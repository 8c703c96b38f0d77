"""
Dense state-vector and density-operator primitives over labeled subsystems.

Index convention: the first label of a layout is the most significant digit
of the flattened index (C order), so ``|1>_A |0>_B`` with dims (2, 2) sits at
flat position 2.  All values are immutable; every operation returns a new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import (
    InvalidDimension,
    InvalidIndex,
    LabelClash,
    LabelNotFound,
    PostSelectionImpossible,
)

EPS_NORM = 1e-10
EPS_UNITARY = 1e-9
EPS_POVM = 1e-8
EPS_ZERO = 1e-12


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=complex)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SubsystemLayout:
    labels: tuple
    dims: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        dims = tuple(int(d) for d in self.dims)
        if len(labels) != len(dims):
            raise InvalidDimension("labels and dims differ in length")
        if len(set(labels)) != len(labels):
            raise LabelClash(f"duplicate labels in {labels}")
        for d in dims:
            if d < 2:
                raise InvalidDimension(f"subsystem dimension {d} < 2")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def of(cls, **dims) -> "SubsystemLayout":
        return cls(tuple(dims), tuple(dims.values()))

    @property
    def total(self) -> int:
        return math.prod(self.dims)

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self.labels

    def axis(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LabelNotFound(f"label {label!r} not in layout {self.labels}") from None

    def axes(self, labels) -> list:
        return [self.axis(l) for l in labels]

    def dim(self, label) -> int:
        return self.dims[self.axis(label)]

    def sub(self, labels) -> "SubsystemLayout":
        return SubsystemLayout(tuple(labels), tuple(self.dim(l) for l in labels))

    def without(self, labels) -> "SubsystemLayout":
        drop = set(labels)
        self.axes(labels)
        keep = [l for l in self.labels if l not in drop]
        return self.sub(keep)

    def concat(self, other: "SubsystemLayout") -> "SubsystemLayout":
        clash = set(self.labels) & set(other.labels)
        if clash:
            raise LabelClash(f"labels {sorted(map(str, clash))} present on both sides")
        return SubsystemLayout(self.labels + other.labels, self.dims + other.dims)

    def relabel(self, mapping: dict) -> "SubsystemLayout":
        return SubsystemLayout(tuple(mapping.get(l, l) for l in self.labels), self.dims)


EMPTY = SubsystemLayout((), ())


@dataclass(frozen=True)
class StateVector:
    """Pure state, possibly unnormalized; ``norm_tracked`` is the squared norm."""

    layout: SubsystemLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes).reshape(-1)
        if amps.shape[0] != self.layout.total:
            raise InvalidDimension(
                f"{amps.shape[0]} amplitudes for layout of dimension {self.layout.total}"
            )
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm_tracked(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    @property
    def is_normalized(self) -> bool:
        return abs(self.norm_tracked - 1.0) <= EPS_NORM

    def normalized(self) -> "StateVector":
        n = self.norm_tracked
        if n < EPS_ZERO:
            raise PostSelectionImpossible("cannot normalize a zero vector")
        return StateVector(self.layout, self.amplitudes / math.sqrt(n))

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.dims)

    def to_density(self) -> "DensityOperator":
        a = self.amplitudes
        return DensityOperator(self.layout, np.outer(a, a.conj()))

    def relabel(self, mapping: dict) -> "StateVector":
        return StateVector(self.layout.relabel(mapping), self.amplitudes)


@dataclass(frozen=True)
class DensityOperator:
    """Hermitian PSD operator; ``trace_tracked`` keeps the (possibly < 1) weight."""

    layout: SubsystemLayout
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        n = self.layout.total
        if m.shape != (n, n):
            raise InvalidDimension(f"matrix shape {m.shape} for layout dimension {n}")
        object.__setattr__(self, "matrix", m)

    @property
    def trace_tracked(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalized(self) -> "DensityOperator":
        t = self.trace_tracked
        if t < EPS_ZERO:
            raise PostSelectionImpossible("cannot normalize a zero operator")
        return DensityOperator(self.layout, self.matrix / t)

    def check(self, tol: float = EPS_NORM) -> None:
        m = self.matrix
        if np.max(np.abs(m - m.conj().T), initial=0.0) > tol:
            raise ValueError("density operator is not Hermitian")
        if np.linalg.eigvalsh(m).min(initial=0.0) < -tol:
            raise ValueError("density operator is not positive semidefinite")

    def relabel(self, mapping: dict) -> "DensityOperator":
        return DensityOperator(self.layout.relabel(mapping), self.matrix)


State = Union[StateVector, DensityOperator]


@dataclass(frozen=True)
class UnitaryOp:
    matrix: np.ndarray
    acting_on: tuple = ()

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidDimension("unitary must be a square matrix")
        if np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) > EPS_UNITARY:
            raise ValueError("matrix is not unitary within tolerance")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "acting_on", tuple(self.acting_on))

    def on(self, *labels) -> "UnitaryOp":
        return UnitaryOp(self.matrix, labels)

    @property
    def dagger(self) -> "UnitaryOp":
        return UnitaryOp(self.matrix.conj().T, self.acting_on)


@dataclass(frozen=True)
class PovmSet:
    elements: tuple
    acting_on: tuple
    outcome_labels: tuple = ()

    def __post_init__(self):
        elements = tuple(_frozen(e) for e in self.elements)
        if not elements:
            raise ValueError("a POVM needs at least one element")
        n = elements[0].shape[0]
        total = np.zeros((n, n), dtype=complex)
        for e in elements:
            if e.shape != (n, n):
                raise InvalidDimension("POVM elements differ in shape")
            if np.max(np.abs(e - e.conj().T)) > EPS_POVM:
                raise ValueError("POVM element is not Hermitian")
            if np.linalg.eigvalsh(e)[0] < -EPS_POVM:
                raise ValueError("POVM element is not positive semidefinite")
            total += e
        if np.max(np.abs(total - np.eye(n))) > EPS_POVM:
            raise ValueError("POVM elements do not sum to the identity")
        labels = tuple(self.outcome_labels) or tuple(str(i) for i in range(len(elements)))
        if len(labels) != len(elements):
            raise ValueError("one outcome label per element required")
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "acting_on", tuple(self.acting_on))
        object.__setattr__(self, "outcome_labels", labels)

    def __len__(self):
        return len(self.elements)

    @cached_property
    def kraus(self) -> tuple:
        """Canonical (Lüders) instrument: the PSD square root of each element."""
        return tuple(psd_sqrt(e) for e in self.elements)

    def on(self, *labels) -> "PovmSet":
        return PovmSet(self.elements, labels, self.outcome_labels)


# --------------------------------------------------------------------------
# linear algebra helpers


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    # rounding noise must not turn into sqrt(1e-17) ~ 3e-9 matrix entries
    w = np.where(w > 1e-14 * max(1.0, float(np.max(np.abs(w)))), w, 0.0)
    w = np.sqrt(w)
    return (v * w) @ v.conj().T


def _apply_axes(t: np.ndarray, mat: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Contract ``mat`` into tensor ``t`` over the given axes (row index of mat)."""
    k = len(axes)
    front = list(range(k))
    moved = np.moveaxis(t, axes, front)
    shape = moved.shape
    sub = math.prod(shape[:k])
    out = (mat @ moved.reshape(sub, -1)).reshape(shape)
    return np.moveaxis(out, front, axes)


def _check_op_size(layout: SubsystemLayout, labels, matrix: np.ndarray):
    need = math.prod(layout.dim(l) for l in labels)
    if matrix.shape != (need, need):
        raise InvalidDimension(
            f"operator of shape {matrix.shape} cannot act on {labels} (dimension {need})"
        )


def apply_matrix(state: State, matrix: np.ndarray, labels) -> State:
    """Apply an arbitrary (not necessarily unitary) operator ``M`` as ``M·ψ`` or ``MρM†``."""
    layout = state.layout
    labels = tuple(labels)
    axes = layout.axes(labels)
    _check_op_size(layout, labels, matrix)
    if isinstance(state, StateVector):
        out = _apply_axes(state.tensor(), matrix, axes)
        return StateVector(layout, out.reshape(-1))
    n = len(layout)
    t = state.matrix.reshape(layout.dims + layout.dims)
    t = _apply_axes(t, matrix, axes)
    t = _apply_axes(t, matrix.conj(), [a + n for a in axes])
    return DensityOperator(layout, t.reshape(layout.total, layout.total))


def apply(op: UnitaryOp, state: State) -> State:
    if not op.acting_on:
        raise LabelNotFound("unitary is not bound to any subsystem labels")
    return apply_matrix(state, op.matrix, op.acting_on)


def embed(matrix: np.ndarray, layout: SubsystemLayout, labels) -> np.ndarray:
    """Full-space matrix of an operator acting on ``labels`` (identity elsewhere)."""
    eye = np.eye(layout.total, dtype=complex).reshape(layout.dims + layout.dims)
    out = _apply_axes(eye, np.asarray(matrix, dtype=complex), layout.axes(labels))
    return out.reshape(layout.total, layout.total)


def tensor(a: State, b: State) -> State:
    layout = a.layout.concat(b.layout)
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(layout, np.kron(a.amplitudes, b.amplitudes))
    return DensityOperator(layout, np.kron(as_density(a).matrix, as_density(b).matrix))


def as_density(s: State) -> DensityOperator:
    return s.to_density() if isinstance(s, StateVector) else s


def reorder(state: State, labels) -> State:
    """Permute the tensor factors into the given label order."""
    labels = tuple(labels)
    if sorted(map(str, labels)) != sorted(map(str, state.layout.labels)) or len(labels) != len(state.layout):
        raise LabelNotFound(f"{labels} is not a permutation of {state.layout.labels}")
    layout = state.layout.sub(labels)
    perm = state.layout.axes(labels)
    if isinstance(state, StateVector):
        return StateVector(layout, np.transpose(state.tensor(), perm).reshape(-1))
    n = len(perm)
    t = state.matrix.reshape(state.layout.dims * 2)
    t = np.transpose(t, perm + [p + n for p in perm])
    return DensityOperator(layout, t.reshape(layout.total, layout.total))


def relabel(state: State, mapping: dict) -> State:
    return state.relabel(mapping)


def _reduced_matrix(state: State, keep) -> np.ndarray:
    layout = state.layout
    keep = tuple(keep)
    kaxes = layout.axes(keep)
    rest = [i for i in range(len(layout)) if i not in kaxes]
    kd = math.prod(layout.dims[i] for i in kaxes)
    if isinstance(state, StateVector):
        t = np.transpose(state.tensor(), kaxes + rest).reshape(kd, -1)
        return t @ t.conj().T
    n = len(layout)
    t = state.matrix.reshape(layout.dims * 2)
    t = np.transpose(t, kaxes + rest + [i + n for i in kaxes] + [i + n for i in rest])
    rd = layout.total // kd
    return np.einsum("itjt->ij", t.reshape(kd, rd, kd, rd))


def partial_trace(state: State, keep) -> DensityOperator:
    """Reduced state on ``keep`` (in the order given); the rest is traced out."""
    keep = tuple(keep)
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    return DensityOperator(state.layout.sub(keep), _reduced_matrix(state, keep))


def discard(state: State, labels) -> State:
    """Trace out ``labels``; a pure state stays pure when the discarded part factorizes."""
    keep = [l for l in state.layout.labels if l not in set(labels)]
    state.layout.axes(labels)
    if not keep:
        raise ValueError("cannot discard every subsystem")
    if isinstance(state, DensityOperator):
        return partial_trace(state, keep)
    layout = state.layout.sub(keep)
    kaxes = state.layout.axes(keep)
    daxes = state.layout.axes(labels)
    mat = np.transpose(state.tensor(), kaxes + daxes).reshape(layout.total, -1)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    if s.size > 1 and s[1] > 1e-9 * max(s[0], 1e-300):
        return DensityOperator(layout, mat @ mat.conj().T)
    return StateVector(layout, u[:, 0] * s[0])


def born_probabilities(state: State, povm: PovmSet) -> np.ndarray:
    rho = _reduced_matrix(state, povm.acting_on)
    _check_op_size(state.layout, povm.acting_on, povm.elements[0])
    total = np.trace(rho).real
    if total < EPS_ZERO:
        raise PostSelectionImpossible("state has zero weight")
    probs = np.array([np.sum(e * rho.T).real for e in povm.elements]) / total
    return probs


class MeasurementResult(NamedTuple):
    outcome: int
    state: State
    probability: float


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_outcome(state: State, povm: PovmSet, rng_seed=None) -> MeasurementResult:
    """Draw one outcome and return the Lüders-collapsed, renormalized state."""
    probs = born_probabilities(state, povm)
    p = np.clip(probs, 0.0, None)
    p = p / p.sum()
    k = int(_rng(rng_seed).choice(len(p), p=p))
    collapsed = apply_matrix(state, povm.kraus[k], povm.acting_on).normalized()
    return MeasurementResult(k, collapsed, float(probs[k]))


class PostSelection(NamedTuple):
    probability: float
    state: State
    amplitude: "StateVector | None"


def contract_bra(state: StateVector, bra, labels) -> StateVector:
    """``<phi|_labels |psi>`` as an unnormalized vector on the remaining labels."""
    labels = tuple(labels)
    layout = state.layout
    bra = np.asarray(bra, dtype=complex)
    need = math.prod(layout.dim(l) for l in labels)
    if bra.shape != (need,):
        raise InvalidDimension(f"bra of length {bra.shape[0]} on dimension {need}")
    axes = layout.axes(labels)
    raxes = [i for i in range(len(layout)) if i not in axes]
    t = np.transpose(state.tensor(), axes + raxes).reshape(need, -1)
    return StateVector(layout.without(labels), bra.conj() @ t)


def post_select(state: State, effect, labels) -> PostSelection:
    """Condition ``state`` on an effect acting on ``labels``.

    A 1-D ``effect`` is a bra ``<phi|`` (given by the components of ``|phi>``);
    the post-selected subsystems are consumed and the unnormalized remainder
    is returned as ``amplitude`` for pure inputs.  A 2-D ``effect`` is a PSD
    operator applied through its square root; the subsystems are kept.
    """
    labels = tuple(labels)
    layout = state.layout
    effect = np.asarray(effect, dtype=complex)
    weight_in = state.norm_tracked if isinstance(state, StateVector) else state.trace_tracked
    if effect.ndim == 1:
        need = math.prod(layout.dim(l) for l in labels)
        if effect.shape[0] != need:
            raise InvalidDimension(f"bra of length {effect.shape[0]} on dimension {need}")
        rest = layout.without(labels)
        axes = layout.axes(labels)
        raxes = [i for i in range(len(layout)) if i not in axes]
        if isinstance(state, StateVector):
            amp = contract_bra(state, effect, labels)
            cond: State = amp
            weight = amp.norm_tracked
        else:
            n = len(layout)
            t = state.matrix.reshape(layout.dims * 2)
            t = np.transpose(t, axes + raxes + [i + n for i in axes] + [i + n for i in raxes])
            rd = rest.total
            t = t.reshape(need, rd, need, rd)
            m = np.einsum("a,aibj,b->ij", effect.conj(), t, effect)
            cond = DensityOperator(rest, m)
            amp = None
            weight = cond.trace_tracked
    else:
        _check_op_size(layout, labels, effect)
        cond = apply_matrix(state, psd_sqrt(effect), labels)
        amp = cond if isinstance(cond, StateVector) else None
        weight = cond.norm_tracked if isinstance(cond, StateVector) else cond.trace_tracked
    if weight_in < EPS_ZERO or weight / weight_in < EPS_ZERO:
        raise PostSelectionImpossible(
            f"post-selection on {labels} has probability {weight / max(weight_in, EPS_ZERO):.3g}"
        )
    return PostSelection(weight / weight_in, cond.normalized(), amp)


def fidelity(a: State, b: State) -> float:
    """Uhlmann fidelity (squared convention) between two normalized states."""
    if a.layout != b.layout:
        raise LabelClash(f"layouts differ: {a.layout} vs {b.layout}")
    a = a.normalized()
    b = b.normalized()
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        f = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    elif isinstance(a, StateVector) or isinstance(b, StateVector):
        vec, rho = (a, b) if isinstance(a, StateVector) else (b, a)
        v = vec.amplitudes
        f = np.vdot(v, rho.matrix @ v).real
    else:
        sa = psd_sqrt(a.matrix)
        w = np.linalg.eigvalsh(sa @ b.matrix @ sa)
        f = np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2
    return float(min(1.0, max(0.0, f)))


# --------------------------------------------------------------------------
# standard states and operators


def basis_state(layout: SubsystemLayout, digits) -> StateVector:
    digits = tuple(int(x) for x in digits)
    if len(digits) != len(layout):
        raise InvalidIndex(f"{len(digits)} digits for {len(layout)} subsystems")
    for x, d in zip(digits, layout.dims):
        if not 0 <= x < d:
            raise InvalidIndex(f"digit {x} out of range for dimension {d}")
    amps = np.zeros(layout.total, dtype=complex)
    amps[np.ravel_multi_index(digits, layout.dims) if digits else 0] = 1.0
    return StateVector(layout, amps)


def ket(vector, label, normalize: bool = True) -> StateVector:
    v = np.asarray(vector, dtype=complex)
    s = StateVector(SubsystemLayout((label,), (v.shape[0],)), v)
    return s.normalized() if normalize else s


def maximally_entangled(d: int, labels=("A", "B")) -> StateVector:
    if d < 2:
        raise InvalidDimension(f"dimension {d} < 2")
    amps = np.eye(d, dtype=complex).reshape(-1) / math.sqrt(d)
    return StateVector(SubsystemLayout(tuple(labels), (d, d)), amps)


def maximally_mixed(d: int, label="A") -> DensityOperator:
    if d < 2:
        raise InvalidDimension(f"dimension {d} < 2")
    return DensityOperator(SubsystemLayout((label,), (d,)), np.eye(d) / d)


def shift_clock(d: int) -> tuple:
    x = np.roll(np.eye(d, dtype=complex), 1, axis=0)
    z = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    if d == 2:  # exact signs instead of exp(i*pi)
        z = np.diag([1.0, -1.0]).astype(complex)
    return x, z


def weyl_matrices(d: int) -> list:
    """``X^x Z^z`` at flat index ``x*d + z``; at d=2 this is 1, Z, X, XZ."""
    if d < 2:
        raise InvalidDimension(f"dimension {d} < 2")
    x, z = shift_clock(d)
    mats = []
    for i in range(d * d):
        xi, zi = divmod(i, d)
        mats.append(np.linalg.matrix_power(x, xi) @ np.linalg.matrix_power(z, zi))
    return mats


def weyl_operators(d: int, label=None) -> list:
    on = () if label is None else (label,)
    return [UnitaryOp(m, on) for m in weyl_matrices(d)]


def correction_matrices(d: int) -> list:
    """Inverse of the scramble ``conj(sigma_i)`` left on the receiving side."""
    return [m.T.copy() for m in weyl_matrices(d)]


def bell_vectors(d: int) -> list:
    phi = np.eye(d, dtype=complex).reshape(-1) / math.sqrt(d)
    return [np.kron(np.eye(d), m) @ phi for m in weyl_matrices(d)]


def bell_basis(d: int, labels=("A", "B")) -> list:
    layout = SubsystemLayout(tuple(labels), (d, d))
    return [StateVector(layout, v) for v in bell_vectors(d)]


def bell_measurement(d: int, labels=("A", "B")) -> PovmSet:
    return PovmSet([np.outer(v, v.conj()) for v in bell_vectors(d)], tuple(labels))


def projective_measurement(basis: np.ndarray, label) -> PovmSet:
    """Measurement in the orthonormal basis given by the columns of ``basis``."""
    basis = np.asarray(basis, dtype=complex)
    return PovmSet([np.outer(basis[:, k], basis[:, k].conj()) for k in range(basis.shape[1])], (label,))


def computational_measurement(d: int, label) -> PovmSet:
    return projective_measurement(np.eye(d), label)


def swap_matrix(d: int) -> np.ndarray:
    s = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            s[j * d + i, i * d + j] = 1.0
    return s


def swap(d: int, a, b) -> UnitaryOp:
    return UnitaryOp(swap_matrix(d), (a, b))


def random_state(d: int, rng=None) -> np.ndarray:
    rng = _rng(rng)
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_unitary(d: int, rng=None) -> np.ndarray:
    rng = _rng(rng)
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))
