"""Exception hierarchy shared by all chronowatt modules."""


class ChronowattError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(ChronowattError, ValueError):
    pass


class DurationError(ChronowattError, ValueError):
    """Requested horizon does not fit the 64-bit nanosecond clock."""


class TraceParseError(ChronowattError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TraceOrderError(TraceParseError):
    pass


class DegenerateSeriesError(ChronowattError, ValueError):
    pass


class RangeError(ChronowattError, ValueError):
    pass


class CalibrationError(ChronowattError, ValueError):
    pass


class ProtocolError(ChronowattError, RuntimeError):
    """Illegal LPI stimulus for the current phase; indicates a simulator bug."""


class ScenarioError(ChronowattError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class InputError(ChronowattError, ValueError):
    pass
