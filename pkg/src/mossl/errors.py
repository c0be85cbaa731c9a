"""Exception types shared across the package, with CLI exit-code mapping."""


class MosslError(Exception):
    """Base class; ``exit_code`` drives the CLI process status."""

    exit_code = 1


class ConfigError(MosslError):
    """Invalid configuration or usage (exit 1)."""

    exit_code = 1


class ShapeError(ConfigError):
    """Tensor operands with incompatible shapes."""


class DataError(MosslError):
    """Malformed or insufficient input data (exit 2)."""

    exit_code = 2


class NumericalError(MosslError):
    """Non-finite values or a failed gradient check (exit 3)."""

    exit_code = 3


class DomainError(NumericalError):
    """Operation applied outside its mathematical domain."""


class CheckpointError(MosslError):
    """Checkpoint file does not match the expected format or shapes."""

    exit_code = 1
