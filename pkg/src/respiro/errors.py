"""Exception hierarchy.

Each class carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class RespiroError(Exception):
    exit_code = 1


class ArgumentError(RespiroError, ValueError):
    exit_code = 1


class ConfigError(RespiroError, ValueError):
    exit_code = 1


class ShapeError(ArgumentError):
    def __init__(self, op, got, expected):
        self.op = op
        self.got = tuple(got)
        self.expected = tuple(expected) if expected is not None else None
        super().__init__(f"{op}: shape {self.got} incompatible with {self.expected}")


class FormatError(RespiroError):
    """Malformed binary input; ``offset`` is the byte position of the fault."""

    exit_code = 2

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class UnsupportedError(FormatError):
    pass


class DataError(RespiroError):
    exit_code = 2


class IntegrityError(RespiroError):
    exit_code = 3


class CapacityError(RespiroError):
    exit_code = 3

    def __init__(self, label, shortfall):
        self.label = label
        self.shortfall = shortfall
        super().__init__(
            f"synthetic pool too small for class {label!r}: short by {shortfall}"
        )


class TrainingError(RespiroError):
    """Numeric failure during optimisation (NaN/Inf)."""

    exit_code = 4

    def __init__(self, message, parameter=None):
        self.parameter = parameter
        super().__init__(message)


class DegenerateInputError(ArgumentError):
    pass
