"""Exception hierarchy shared across the package."""


class CheckerError(Exception):
    """Base class for every error raised by jitcheck."""


class InvalidRequestError(CheckerError, ValueError):
    pass


class DecodeError(CheckerError, ValueError):
    """Raised when a byte layout cannot be decoded.

    ``field`` names the part of the layout that was being read.
    """

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class MeasurementError(CheckerError):
    def __init__(self, artifact, cause: BaseException | None = None):
        super().__init__(f"cannot measure artifact {artifact.id}@{artifact.version}: {cause}")
        self.artifact = artifact
        self.cause = cause


class ReportError(CheckerError):
    """Base class for report verification failures."""


class AuthenticationError(ReportError):
    pass


class MalformedReportError(ReportError):
    pass


class BindingError(ReportError):
    """Report decrypted fine but belongs to a different challenge."""


class StoreError(CheckerError):
    pass


class ManifestError(StoreError):
    pass


class ProtocolError(CheckerError):
    pass
