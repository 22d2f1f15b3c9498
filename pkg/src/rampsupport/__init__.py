"""Probabilistic ramping support capability of microgrids.

A continuation power flow gives the RSC of one realization of the random
inputs; a data-driven sparse polynomial chaos surrogate propagates the
input uncertainty, its coefficients give Sobol' indices, and BESS
smoothing of the dominant inputs raises the confidence-level RSC.
"""

from .cpf import ConstraintKind, CpfOptions, RscResult, Violation, check_limits, max_lambda
from .distribution import Provenance, RscDistribution, confidence_rsc, histogram, ks_statistic
from .enhancement import (
    BessAssignment,
    BessSchedule,
    aggregate_by_branch,
    assess_post_smoothing,
    smooth_command,
    soc_update,
)
from .exceptions import (
    IllConditionedMomentsError,
    InfeasibleBaseError,
    RankDeficientError,
    SingularJacobianError,
    SolverError,
    UnderdeterminedError,
    ValidationError,
    ZeroVarianceError,
)
from .network import (
    BessUnit,
    Branch,
    Bus,
    BusKind,
    DeviceKind,
    Generator,
    Network,
    RandomDevice,
    TransferDirection,
    build_direction,
    load_case,
    save_case,
)
from .pce import ChaosBasis, DataDrivenPCE, build_truncation, eval_basis, load_model, save_model, univariate_basis
from .pipeline import AssessConfig, assess, evaluate_rsc, mcs
from .powerflow import Injections, PowerFlowState, branch_currents, solve
from .sensitivity import SobolReport, rank_dominant, sobol_index, sobol_report
from .stochastic import (
    MomentTable,
    SampleSet,
    assemble_injections,
    device_outputs,
    pv_power,
    raw_moments,
    rebalance_dispatch,
    synth_samples,
    wt_power,
)

__version__ = "0.1.0"
