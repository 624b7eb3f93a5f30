"""Exception hierarchy shared by every simulator stage."""


class FedChainError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(FedChainError, ValueError):
    pass


class ShapeError(FedChainError, ValueError):
    pass


class ContractViolation(FedChainError, ValueError):
    """A documented precondition was not met by the caller."""


class EmptyPartitionError(ContractViolation):
    """Raised by local training when a node has no samples; the engine skips the node."""


class FormatError(FedChainError, ValueError):
    pass


class TruncatedFileError(FedChainError, OSError):
    pass


class PartitionError(FedChainError, ValueError):
    pass


class AttackError(FedChainError, ArithmeticError):
    pass


class AggregationError(FedChainError, ValueError):
    pass


class ValidationError(FedChainError, ValueError):
    pass


class ConsensusError(FedChainError, ValueError):
    pass


class EncodingError(FedChainError, ValueError):
    pass


class IntegrityError(FedChainError):
    pass


class OrderingError(FedChainError):
    pass


class SimulationError(FedChainError):
    """A run aborted mid-way.

    ``round_index`` and ``stage`` locate the failure, ``partial`` holds the
    metrics of every round completed before it.
    """

    def __init__(self, message, round_index, stage, partial=None):
        super().__init__(f"round {round_index}, stage {stage}: {message}")
        self.round_index = round_index
        self.stage = stage
        self.partial = partial if partial is not None else []
