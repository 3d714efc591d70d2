"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter object is out of its legal range."""


class QueryError(ValueError):
    """A query names concepts that are unknown or at the wrong level."""


class ContractError(ValueError):
    """An operation was called on inputs that violate its contract."""


class PreconditionError(ValueError):
    """A builder precondition (failure or connectivity constraint) does not hold.

    ``item`` names the offending concept, neuron or (neuron, concept) pair.
    """

    def __init__(self, message, item=None):
        super().__init__(message)
        self.item = item
