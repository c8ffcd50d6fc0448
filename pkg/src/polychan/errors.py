"""Exception types shared across the package."""


class PolychanError(Exception):
    """Base class for errors raised by this package."""


class ChannelFormatError(PolychanError):
    """A channel document could not be parsed or failed schema validation."""


class CapExceededError(PolychanError):
    """A requested computation exceeds the configured desk-scale limits."""
