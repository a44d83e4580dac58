"""Exception types shared across the toolkit."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (shape, range, unknown option)."""


class NumericFault(ArithmeticError):
    """A computation produced NaN or Inf."""

    def __init__(self, message, op=None, node_id=None, component=None):
        super().__init__(message)
        self.op = op
        self.node_id = node_id
        self.component = component


class ParseError(ValueError):
    """A point-cloud, manifest or config file could not be parsed."""


class EmptyInputError(ValueError):
    pass


class CheckpointError(RuntimeError):
    """Checkpoint container is corrupt, truncated or of an unsupported version."""


class ConfigError(ValueError):
    def __init__(self, message, unknown_keys=()):
        super().__init__(message)
        self.unknown_keys = list(unknown_keys)
