"""Exception types shared across the package."""


class VinitError(Exception):
    """Base class for package-specific failures."""


class DegeneratePatchError(VinitError, ValueError):
    """Patch has no usable intensity structure (singular KLT normal matrix)."""


class UnobservableError(VinitError, RuntimeError):
    """The requested quantity is not observable from the given data."""


class DatasetError(VinitError, ValueError):
    """Malformed or inconsistent dataset input."""


class ScenarioError(VinitError, ValueError):
    """Invalid synthetic scenario configuration."""
