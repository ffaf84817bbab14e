"""Direct data-driven synthesis of nonlinear state-feedback controllers."""

from .basis import FunctionLibrary, evaluate, jacobian, parse_library
from .data import DataSet, Experiment, InputSignal, PlantModel, Run, check_rank, collect, simulate_plant
from .results import SynthesisResult
from .synthesis import (
    DiagonalStabilization,
    LinearizedStabilization,
    ModelReference,
    NonlinearityCancellation,
    OscillatorDesign,
    Passivation,
    PassivationLinear,
    SynthesisOptions,
    attainability_membership,
    certify_by_data,
    synth_diagonal_stabilization,
    synth_from_target,
    synth_linearized_stabilization,
    synth_model_reference,
    synth_nonlinearity_cancellation,
    synth_oscillator,
    synth_passivation,
    synth_passivation_linear,
    synthesize,
)
from .verification import ClosedLoop, recheck_certificate, simulate_closed_loop, spectral_radius

__version__ = "0.1.0"
