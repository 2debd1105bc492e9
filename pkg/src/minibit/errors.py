"""Exception hierarchy shared by every module."""


class MinibitError(Exception):
    """Base class for all library errors."""


class ShapeError(MinibitError, ValueError):
    pass


class ConfigError(MinibitError, ValueError):
    pass


class NumericError(MinibitError, ArithmeticError):
    pass


class RegistryError(MinibitError, KeyError):
    def __str__(self):
        # KeyError quotes its message; keep it readable
        return str(self.args[0]) if self.args else ""


class DatasetError(MinibitError):
    pass


class ParseError(MinibitError):
    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class CheckpointError(MinibitError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


class LoadMismatchError(CheckpointError):
    def __init__(self, message, keys=()):
        self.keys = list(keys)
        if self.keys:
            message = f"{message}: {', '.join(self.keys)}"
        super().__init__(message)


class TrainingError(MinibitError):
    pass


class OracleError(MinibitError):
    pass
