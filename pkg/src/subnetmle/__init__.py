"""Maximum-likelihood identification of sub-networks in dynamic ARMAX networks."""

from .errors import (
    ChannelError,
    ConfigError,
    DimensionError,
    DivergenceError,
    DomainError,
    ObservationError,
    PoleError,
    RankError,
    SeparationError,
    SingularOperatorError,
    SubnetmleError,
    TopologyError,
    UndefinedFitError,
)
from .estimator import (
    AssumptionReport,
    EstimateResult,
    EstimationOptions,
    EstimationProblem,
    SubnetworkMLE,
    assumption_report,
    estimate,
    stage1_arx,
    stage2_armax_shared,
    stage3_full,
)
from .evaluation import (
    EvalReport,
    RationalTF,
    closed_loop_identity_check,
    fit,
    monte_carlo,
    tf_eval,
    tf_from_armax,
    validation_simulate,
)
from .likelihood import (
    LAMBDA_FLOOR,
    EstimationData,
    ObservationSelector,
    ParameterVectorA,
    concentrate_lambda,
    estimation_data_from_signals,
    gradient,
    nll_full,
    nll_marginal,
    residuals_full,
    selector_from_names,
)
from .network import (
    ArmaxParams,
    EquivalentSubnetwork,
    NetworkModel,
    Partition,
    Topology,
    build_equivalent_subnetwork,
    check_separation,
    detect_separator_feedback,
    has_path,
    validate,
)
from .optimize import MinimizeOptions, MinimizeResult, minimize
from .presets import DEMO_PARTITION, demo_network, example_config_path
from .simulate import (
    RngSpec,
    SignalSet,
    draw_inputs,
    draw_noise,
    simulate_dense_oracle,
    simulate_equivalent,
    simulate_recursive,
)
from .toeplitz import (
    BandedLowerToeplitz,
    apply,
    from_polynomial,
    solve_unit_lower,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
