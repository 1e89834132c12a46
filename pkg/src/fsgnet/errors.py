class ValidationError(ValueError):
    """Raised when inputs, shapes, or configuration values violate a contract."""


class DivergenceError(RuntimeError):
    """Raised when a training loss becomes non-finite."""


def require(condition, message):
    if not condition:
        raise ValidationError(message)
