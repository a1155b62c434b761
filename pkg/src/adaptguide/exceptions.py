"""Exception hierarchy. Each class carries a stable ``code`` used by the CLI."""


class AdaptGuideError(Exception):
    code = "E_GENERIC"
    exit_status = 1


class DomainError(AdaptGuideError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    code = "E_DOMAIN"
    exit_status = 4


class ContractError(AdaptGuideError, ValueError):
    """Inputs violate a documented precondition (shapes, region sets, ...)."""

    code = "E_CONTRACT"
    exit_status = 4


class SamplingError(AdaptGuideError, RuntimeError):
    code = "E_SAMPLING"
    exit_status = 5


class AlignmentError(AdaptGuideError, ValueError):
    code = "E_ALIGNMENT"
    exit_status = 4


class ConfigError(AdaptGuideError, ValueError):
    code = "E_CONFIG"
    exit_status = 2


class ParseError(AdaptGuideError, ValueError):
    code = "E_PARSE"
    exit_status = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
