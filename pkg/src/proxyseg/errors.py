"""Exception types shared across the engine.

Everything user-facing derives from ProxysegError so the CLI can map
validation problems to exit code 1 while genuine I/O failures (OSError)
keep exit code 2.
"""


class ProxysegError(Exception):
    """Base class for engine errors caused by bad inputs or config."""


class ShapeError(ProxysegError):
    """Array extents disagree with an operation's contract."""


class NpyFormatError(ProxysegError):
    """A .npy file violates the supported subset of the format.

    `reason` is a stable machine-checkable tag: one of "magic", "version",
    "header", "fortran_order", "dtype", "rank", "truncated".
    """

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


class BundleValidationError(ProxysegError):
    """A manifest or its arrays violate a bundle invariant.

    `field` names the offending manifest key (dotted path for nested
    window entries, e.g. "windows[1].hv").
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class MapFormatError(ProxysegError):
    """A label-map or palette file cannot be parsed or is out of range."""


class ConfigError(ProxysegError):
    """A run configuration is missing or inconsistent.

    `field` names the flag/config key at fault.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
