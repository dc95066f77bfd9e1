"""Exception types raised across the package."""


class GreyBMError(ValueError):
    """Base class for argument and domain failures."""


class DomainError(GreyBMError):
    """Argument outside the range an evaluator supports."""


class ConstraintError(GreyBMError):
    """Model parameters violate a hypothesis (e.g. alpha * d >= 2 for local times)."""


class InadmissibleError(GreyBMError):
    """Test function lies outside the neighbourhood where a transform is defined."""


class QuadratureError(GreyBMError):
    """Numerical integration failed to reach its tolerance."""


class GridResolutionWarning(UserWarning):
    """A grid computation's estimated discretisation error exceeds its target."""
