class FedOptError(Exception):
    """Base class for every error raised by this package."""


class ContractError(FedOptError, ValueError):
    """A function was called with arguments that violate its preconditions."""


class ConfigError(FedOptError, ValueError):
    pass


class ParseError(FedOptError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProtocolError(FedOptError, RuntimeError):
    """Server received reports it cannot aggregate."""


class DivergenceError(FedOptError, ArithmeticError):
    def __init__(self, message, *, step=None, round=None, client=None):
        parts = []
        if round is not None:
            parts.append(f"round {round}")
        if client is not None:
            parts.append(f"client {client}")
        if step is not None:
            parts.append(f"step {step}")
        if parts:
            message = f"{message} ({', '.join(parts)})"
        super().__init__(message)
        self.step = step
        self.round = round
        self.client = client
