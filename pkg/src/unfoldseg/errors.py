"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument has the wrong shape, range or sign."""


class DegeneracyError(ArithmeticError):
    """A closed-form update hit a non-positive denominator."""


class ParseError(ValueError):
    """Malformed image file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedFormatError(ValueError):
    """Well-formed file in a variant we do not handle (e.g. maxval != 255)."""


class ConfigError(ValueError):
    """Config text rejected. ``key`` names the offending key when there is one."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
