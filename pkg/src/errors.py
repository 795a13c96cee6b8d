"""Exception taxonomy with stable process exit codes."""


class SpcseError(Exception):
    """Base class for every error the pipeline raises on purpose."""
    exit_code = 1


# --- 2: usage / configuration ---

class ConfigError(SpcseError):
    exit_code = 2


class UsageError(SpcseError):
    exit_code = 2


class DependencyError(SpcseError):
    """An upstream stage artifact is missing."""
    exit_code = 2

    def __init__(self, stage: str, path: str):
        super().__init__(f"missing artifact {path}; run the '{stage}' stage first")
        self.stage = stage
        self.path = path


# --- 3: data / parse ---

class DataError(SpcseError):
    exit_code = 3


class InputError(DataError):
    pass


class VocabError(DataError):
    pass


class DataIOError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, path: str, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


# --- 4: integrity / compatibility ---

class IntegrityError(SpcseError):
    exit_code = 4


class CompatibilityError(SpcseError):
    exit_code = 4


# --- 5: numeric ---

class NumericError(SpcseError):
    exit_code = 5


class MetricError(NumericError):
    pass


class ShapeError(NumericError):
    pass


class StateError(NumericError):
    pass
