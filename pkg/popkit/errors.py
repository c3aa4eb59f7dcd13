"""Exception types raised by the library. The CLI maps them to exit codes."""


class PopkitError(Exception):
    """Base class for every error raised by popkit."""


class ParameterError(PopkitError, ValueError):
    """A parameter is outside its valid range. `name` is the parameter name."""

    def __init__(self, name: str, message: str):
        self.name = name
        self.detail = message
        super().__init__(f"{name}: {message}")


class WidthMismatchError(ParameterError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__("width", f"challenge width {got} does not match {expected}")


class CrpFormatError(PopkitError, ValueError):
    """Malformed CRP file. `line` is 1-based; 0 refers to the JSON header."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")
