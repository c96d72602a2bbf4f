"""Exception types shared across the package."""


class FedSecError(Exception):
    """Base class for all package errors."""


class ConfigError(FedSecError, ValueError):
    """Invalid configuration or argument value. Raised before any computation."""


class ParseError(FedSecError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCorpusError(FedSecError, ValueError):
    pass


class DimensionError(FedSecError, ValueError):
    pass


class TrainingError(FedSecError, RuntimeError):
    """Failure inside the federated round loop; carries the round index."""

    def __init__(self, message, round_index=None, module=None):
        self.round_index = round_index
        self.module = module
        ctx = []
        if module:
            ctx.append(module)
        if round_index is not None:
            ctx.append(f"round {round_index}")
        if ctx:
            message = f"[{', '.join(ctx)}] {message}"
        super().__init__(message)
