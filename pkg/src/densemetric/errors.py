"""Exception hierarchy shared by all densemetric modules."""


class DensemetricError(Exception):
    """Base class for library errors."""


class InvalidInput(DensemetricError, ValueError):
    pass


class ParseError(InvalidInput):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(DensemetricError, ArithmeticError):
    pass


class StateError(DensemetricError, RuntimeError):
    pass


class DegenerateEnclosure(DensemetricError):
    pass


class EmptyMiningResult(DensemetricError):
    """No tuple survived the hard-mining thresholds."""


class TrainingStalled(DensemetricError):
    pass


class GenerationFailed(DensemetricError):
    pass
