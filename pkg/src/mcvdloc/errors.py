"""Exception hierarchy shared by every stage of the pipeline."""


class McvdError(Exception):
    """Base class; the CLI turns these into a one-line machine-readable error."""

    code = "error"


class ConfigError(McvdError):
    code = "config"


class NonPositiveParameter(McvdError, ValueError):
    code = "non_positive_parameter"


class OverlappingReceivers(McvdError, ValueError):
    code = "overlapping_receivers"


class TransmitterInsideReceiver(McvdError, ValueError):
    code = "transmitter_inside_receiver"


class IndexOutOfRange(McvdError, IndexError):
    code = "index_out_of_range"


class StepNotDividingSampleInterval(McvdError, ValueError):
    code = "step_not_dividing_sample_interval"


class DistanceInsideReceiver(McvdError, ValueError):
    code = "distance_inside_receiver"


class LengthMismatch(McvdError, ValueError):
    code = "length_mismatch"


class SingularSystem(McvdError, ArithmeticError):
    code = "singular_system"


class NonFiniteResidual(McvdError, ArithmeticError):
    code = "non_finite_residual"


class AllZeroTrace(McvdError):
    code = "all_zero_trace"


class NoConvergence(McvdError):
    code = "no_convergence"


class DegenerateVariance(McvdError, ValueError):
    code = "degenerate_variance"


class TooFewReceivers(McvdError, ValueError):
    code = "too_few_receivers"


class TooFewUsableReceivers(TooFewReceivers):
    code = "too_few_usable_receivers"


class DegenerateGeometry(McvdError, ArithmeticError):
    code = "degenerate_geometry"
