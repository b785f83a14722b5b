"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain where an operation is defined."""


class RegimeError(ValueError):
    """A precondition of an experiment (scale regime, good event) does not hold.

    The command line maps this to exit status 3.
    """
