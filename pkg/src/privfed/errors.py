"""Exception hierarchy shared across the package."""


class FederationError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(FederationError):
    """Bad local input: config, CSV, CLI arguments, share files."""


class WidthError(ValidationError):
    """Word width outside the supported 1..64 range, or value out of range."""


class ShareMismatchError(ValidationError):
    """Two shares that cannot be combined (width or metadata disagree)."""


class PairingError(ValidationError):
    """Share file pair whose public metadata does not match."""


class SchemaError(ValidationError):
    """Records or tables with inconsistent field layout."""


class ConfigError(ValidationError):
    """Malformed or inconsistent study configuration."""


class CsvError(ValidationError):
    """Malformed input CSV row."""

    def __init__(self, message, row=None, column=None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", column {column!r})" if column else ")")
        super().__init__(message + loc)
        self.row = row
        self.column = column


# Abort reason codes carried in ABORT frames.
ABORT_VERSION = 1
ABORT_CONFIG = 2
ABORT_ROLE = 3
ABORT_FRAMING = 4
ABORT_PROTOCOL = 5
ABORT_DOMAIN = 6

ABORT_NAMES = {
    ABORT_VERSION: "version mismatch",
    ABORT_CONFIG: "config divergence",
    ABORT_ROLE: "duplicate role",
    ABORT_FRAMING: "framing error",
    ABORT_PROTOCOL: "protocol violation",
    ABORT_DOMAIN: "domain violation",
}


class ProtocolAbort(FederationError):
    """Session torn down; carries the abort reason code."""

    def __init__(self, code, reason=""):
        name = ABORT_NAMES.get(code, "abort")
        super().__init__(f"abort code {code} ({name})" + (f": {reason}" if reason else ""))
        self.code = code
        self.reason = reason


class DomainViolation(ProtocolAbort):
    """A secret cube cell key fell outside the public strata domain."""

    def __init__(self, reason="cube cell outside strata domain"):
        super().__init__(ABORT_DOMAIN, reason)
