class MopKernelError(Exception):
    """
    Generic mop-kernel error.
    """


class ConfigurationError(MopKernelError):
    """
    Error that is thrown when a potential, spectrum or ordering violates the
    ensemble's invariants, or when a configuration file cannot be parsed.
    """


class UnsupportedConfigurationError(MopKernelError):
    """
    Error that is thrown when an operation is asked for on a configuration it is
    not defined for, e.g. the three-term Christoffel-Darboux formula with p != 2.
    """


class QuadratureError(MopKernelError):
    """
    Error that is thrown when doubling the panel count keeps changing a quadrature
    result by more than the requested tolerance.
    """


class IllConditionedError(MopKernelError):
    """
    Error that is thrown when a moment matrix exceeds the condition limit or is
    singular to working precision.
    """


class BreakdownError(MopKernelError):
    """
    Error that is thrown when an h-number that must not vanish is numerically zero.
    """


class ConsistencyError(MopKernelError):
    """
    Error that is thrown when two quantities that are equal in exact arithmetic
    disagree beyond tolerance.
    """


class AxisProximityError(MopKernelError):
    """
    Error that is thrown when a Cauchy transform is requested closer to the real
    axis than the hard floor.
    """
