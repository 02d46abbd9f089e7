"""Exception types shared by the numerical library and the suites."""


class Levy2bError(Exception):
    """Base class for every error raised by levy2b."""


class ExprSyntaxError(Levy2bError):
    """Malformed expression source, with the character offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.message = message
        self.offset = offset


class EvalDomainError(Levy2bError):
    """Expression evaluated outside its domain (division by zero, sqrt of a negative, ...)."""


class SpecError(Levy2bError):
    """Invalid problem data: bad Levy measure, empty control grid, missing jump value, ..."""


class CFLError(Levy2bError):
    """Time step too large for the explicit monotone scheme."""

    def __init__(self, message: str, max_dt: float, control_index: int | None = None):
        super().__init__(message)
        self.max_dt = max_dt
        self.control_index = control_index


class GridMismatchError(Levy2bError):
    """Two fields that must share a grid do not."""


class ConfigError(Levy2bError):
    """One or more configuration problems, all collected."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)
