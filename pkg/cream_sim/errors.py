class CreamError(Exception):
    """Base class for every error raised by the simulator."""


class GeometryError(CreamError, ValueError):
    pass


class LayoutError(CreamError, ValueError):
    pass


class AddressError(LayoutError):
    pass


class ConfigError(CreamError, ValueError):
    pass


class EngineError(CreamError, RuntimeError):
    pass


class TraceFormatError(CreamError, ValueError):
    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
