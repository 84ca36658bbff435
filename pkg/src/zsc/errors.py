class ZSCError(Exception):
    """Base class for library errors."""


class ConfigurationError(ZSCError, ValueError):
    pass


class SchemaError(ZSCError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class PlanError(ZSCError):
    pass


class ExecutionError(ZSCError):
    pass


class OracleSizeError(ExecutionError):
    pass


class ModelError(ZSCError):
    pass


class CheckpointError(ModelError):
    pass


class LeakageError(ZSCError):
    """A held-out database's samples reached a training set."""
