"""Exception hierarchy shared by all modules."""


class TablError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(TablError, ValueError):
    """Operands have incompatible shapes."""

    def __init__(self, message, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)
        if self.shapes:
            message = f"{message} (shapes: {', '.join(str(s) for s in self.shapes)})"
        super().__init__(message)


class ValidationError(TablError, ValueError):
    """A value violates a documented domain (non-finite, out of range, bad label...)."""


class DataError(TablError):
    """Input data file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{':'.join(where)}: {message}"
        super().__init__(message)


class NumericalError(TablError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message)
