"""Exception hierarchy shared by every module."""


class VolsplatError(Exception):
    pass


class DimensionError(VolsplatError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ContractError(VolsplatError, ValueError):
    """A documented precondition was violated by the caller."""


class FormatError(VolsplatError, ValueError):
    """An on-disk file does not follow its declared layout."""


class VersionError(VolsplatError):
    """A checkpoint does not match the running configuration."""
