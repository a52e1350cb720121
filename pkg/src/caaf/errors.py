"""Exception hierarchy shared across the package.

The CLI maps ``ConfigError`` to exit code 2 and every other ``CAAFError`` to 3.
"""


class CAAFError(Exception):
    exit_code = 3


class ConfigError(CAAFError, ValueError):
    exit_code = 2


class DataError(CAAFError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MetricError(CAAFError, ValueError):
    pass


class ShapeError(CAAFError, ValueError):
    pass


class RankError(CAAFError, ArithmeticError):
    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class TrainingError(CAAFError, ArithmeticError):
    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} (epoch={epoch}, batch={batch})")


class GenerationError(CAAFError, ValueError):
    pass


class PipelineError(CAAFError, RuntimeError):
    pass
