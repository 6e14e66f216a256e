
class FedQuadError(Exception):
    """Base error. `exit_code` is what the CLI returns for it."""
    exit_code = 1
    category = "internal"


class ConfigError(FedQuadError, ValueError):
    exit_code = 2
    category = "config"

    def __init__(self, message: str, key: str = "", line: int = None):
        self.key = key
        self.line = line
        where = ""
        if key:
            where = f"{key}: "
        suffix = f" (line {line})" if line is not None else ""
        super().__init__(f"{where}{message}{suffix}")


class DataError(FedQuadError):
    exit_code = 3
    category = "data"


class PartitionError(DataError):
    pass


class NumericError(FedQuadError, ArithmeticError):
    exit_code = 4
    category = "numeric"


class ArtifactIOError(FedQuadError, OSError):
    exit_code = 5
    category = "io"


class StateError(FedQuadError, RuntimeError):
    pass


class AggregationError(FedQuadError, ValueError):
    pass


class MetricError(FedQuadError, ValueError):
    pass


def with_context(err: FedQuadError, context: str) -> FedQuadError:
    """Same error class, message prefixed with `context`."""
    out = type(err).__new__(type(err))
    Exception.__init__(out, f"{context}: {err}")
    out.__dict__.update(err.__dict__)
    return out
