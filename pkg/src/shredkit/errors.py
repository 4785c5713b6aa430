"""Exception hierarchy.

Every error carries a short ``category`` string; the command-line entry point
prints it as the machine-parsable prefix of its single-line error report.
"""


class ShredkitError(Exception):
    category = "error"


class InvalidInputError(ShredkitError, ValueError):
    """Input data is malformed (non-finite entries, wrong dimensionality)."""

    category = "invalid-input"


class InvalidArgumentError(ShredkitError, ValueError):
    category = "invalid-argument"


class ShapeError(ShredkitError, ValueError):
    category = "shape"


class StateError(ShredkitError, RuntimeError):
    category = "state"


class ConvergenceError(ShredkitError, ArithmeticError):
    category = "convergence"

    def __init__(self, message, iterations):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class IllConditionedError(ShredkitError, ArithmeticError):
    category = "ill-conditioned"

    def __init__(self, message, condition):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class TrainingDivergedError(ShredkitError, ArithmeticError):
    category = "training-diverged"

    def __init__(self, epoch, context=""):
        msg = f"training loss became non-finite at epoch {epoch}"
        if context:
            msg = f"{msg} [{context}]"
        super().__init__(msg)
        self.epoch = epoch
        self.context = context


class FormatError(ShredkitError, ValueError):
    category = "format"

    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class DegenerateTruthError(ShredkitError, ValueError):
    category = "degenerate-truth"


class CellFailureError(ShredkitError, RuntimeError):
    category = "cell-failure"

    def __init__(self, cell, seeds, causes=()):
        super().__init__(f"every trial failed for cell {cell}; seeds {list(seeds)}")
        self.cell = cell
        self.seeds = list(seeds)
        self.causes = list(causes)


class ConfigError(ShredkitError, ValueError):
    category = "config"
