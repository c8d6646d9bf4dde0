"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration/parse problems exit 2,
infeasible models exit 3, non-converged runs exit 4 and solver-layer
failures exit 5.
"""


class EdgeplanError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(EdgeplanError):
    """Invalid parameters: inverted ranges, out-of-range knobs, bad flags."""


class ParseError(EdgeplanError):
    """Malformed instance or scenario file; message carries file/field context."""


class UnsupportedEnumerationError(EdgeplanError):
    """Extreme-point enumeration requested outside its supported regime."""


class ModelInfeasibleError(EdgeplanError):
    """An optimization model was proven infeasible.

    `binding` names the constraint class diagnosed as responsible
    (e.g. "delay_cap", "budget", "placement").
    """

    def __init__(self, message, binding=None):
        super().__init__(message)
        self.binding = binding


class RobustInfeasibleError(ModelInfeasibleError):
    """Second-stage feasibility fails for some demand in the uncertainty set."""
