"""Exception hierarchy shared by every deskbert module."""


class DeskbertError(Exception):
    """Base class for all package errors."""


class DimensionError(DeskbertError, ValueError):
    pass


class ParameterError(DeskbertError, ValueError):
    pass


class ContractError(DeskbertError, RuntimeError):
    pass


class InputError(DeskbertError, ValueError):
    pass


class ValidationError(InputError):
    pass


class ScheduleError(DeskbertError, ValueError):
    pass


class ParseError(DeskbertError, ValueError):
    """Raised for malformed data files.

    ``problems`` holds ``(line_number, message)`` pairs for every bad line,
    so callers can report all of them at once.
    """

    def __init__(self, path, problems):
        self.path = str(path)
        self.problems = list(problems)
        shown = "; ".join(f"line {n}: {msg}" for n, msg in self.problems[:5])
        more = f" (+{len(self.problems) - 5} more)" if len(self.problems) > 5 else ""
        super().__init__(f"{self.path}: {shown}{more}")


class CorruptCheckpointError(DeskbertError):
    def __init__(self, check, detail=""):
        self.check = check
        super().__init__(f"corrupt checkpoint ({check})" + (f": {detail}" if detail else ""))


class UnsupportedVersionError(CorruptCheckpointError):
    def __init__(self, version):
        self.version = version
        DeskbertError.__init__(self, f"unsupported checkpoint format version {version}")
        self.check = "version"


class ConfigMismatchError(DeskbertError):
    pass
