"""Teleportation of pre- and post-selected quantum states, simulated exactly."""

from .engine import (
    DensityOperator,
    PovmSet,
    StateVector,
    SubsystemLayout,
    UnitaryOp,
    fidelity,
    partial_trace,
    post_select,
)
from .errors import (
    InvalidDimension,
    InvalidIndex,
    LabelClash,
    LabelNotFound,
    PostSelectionImpossible,
    ProtocolOrderError,
    ResourceLimit,
    SimulationError,
)
from .oracle import ExperimentScript, TwoStateVector, abl_probabilities, run_direct
from .teleport import teleport_post, teleport_pre, teleport_prepost
from .portbased import PbtChannel, build_pgm, pbt_post_selected, pbt_prepost, pbt_probabilistic, pbt_teleport
from .nonlocal_compute import BipartiteTwoStateVector, instantaneous_nonlocal, ledger_report
from .appendix import dense_coding_via_postteleport, extract_entanglement

__version__ = "0.1.0"
