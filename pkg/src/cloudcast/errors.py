"""Exception taxonomy shared by the library, the service, and the CLI.

Each error carries a category; the CLI maps categories to exit codes and
the service maps them to HTTP statuses, so raising the right subclass is
all a module has to do.
"""


class CloudcastError(Exception):
    """Base class for every error this package raises on purpose."""

    category = "usage"


class DomainError(CloudcastError):
    """Invalid values or violated preconditions."""

    category = "usage"


class FormatError(CloudcastError):
    """Unparseable or inconsistent file content."""

    category = "format"


class ProtocolError(FormatError):
    """A remote service replied, but with a malformed payload."""

    category = "format"


class LookupMissError(CloudcastError):
    """A precomputed artifact (e.g. a per-view vector file) is missing."""

    category = "format"


class TransportError(CloudcastError):
    """A remote endpoint could not be reached or returned a failure status."""

    category = "transport"


class CapabilityError(CloudcastError):
    """A provider does not support the requested mode."""

    category = "capability"


# CLI exit codes per category; 0 is success, 1 is reserved for crashes.
EXIT_CODES = {
    "usage": 2,
    "format": 3,
    "transport": 4,
    "capability": 5,
}


def exit_code_for(err: CloudcastError) -> int:
    return EXIT_CODES.get(err.category, 1)


def read_bytes_checked(path) -> bytes:
    """Read a binary file, turning IO failures into categorized errors."""
    from pathlib import Path

    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read: {exc}")


def read_text_checked(path) -> str:
    try:
        from pathlib import Path

        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: cannot read: {exc}")
