"""Exception and warning types.

Every error carries a short machine-readable ``code`` that the command line
interface reports in its JSON error output.
"""


class MargeffError(Exception):
    code = "ERROR"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class FormulaError(MargeffError):
    code = "FORMULA_SYNTAX"


class DataError(MargeffError):
    code = "DATA_ERROR"


class ModelFitError(MargeffError):
    code = "MODEL_FIT"


class ConvergenceError(ModelFitError):
    code = "NON_CONVERGENCE"


class RankDeficientError(ModelFitError):
    code = "RANK_DEFICIENT"


class SupportError(ModelFitError):
    code = "RESPONSE_SUPPORT"


class EstimandError(MargeffError):
    code = "ESTIMAND"


class LearnerError(MargeffError):
    code = "LEARNER"


class PowerError(MargeffError):
    code = "POWER"


class EstimationWarning(UserWarning):
    """Statistical conditions worth flagging that do not stop a computation."""
