"""Three-pulse photon echo storage in inhomogeneously broadened ensembles."""

from .atom_dynamics import (
    AtomState,
    Propagator,
    apply,
    dephase,
    free_evolution_2lvl,
    free_evolution_3lvl,
    impulse_propagator_2lvl,
    impulse_propagator_raman,
    pi_pulse_23,
)
from .ensemble import (
    CLASSICAL_FIDELITY,
    EnsembleSpec,
    ObservableReport,
    echo_intensity,
    fidelity_timebin,
    gaussian_average,
    input_intensity,
    noise_intensity,
    observe,
    polarization,
    readout_efficiency_bound,
    snr,
    storage_polarization,
)
from .errors import InvalidParameterError, NumericalFailureError, UndefinedRatioError
from .protocols import (
    Protocol,
    PulseEvent,
    build_ham_variant,
    build_three_level_3pe,
    build_two_level_3pe,
    single_atom_trace,
)

__version__ = "0.1.0"
