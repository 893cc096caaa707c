"""Exception hierarchy shared by every layer."""

from __future__ import annotations


class ChainlessError(Exception):
    """Base class for all errors raised by this package."""


class RejectedInput(ChainlessError):
    """The application's transition function refused an input; state is unchanged."""


class ContinuityError(ChainlessError):
    pass


class ProofIndexError(ChainlessError, IndexError):
    pass


class QueueClosed(ChainlessError):
    pass


class LateArrival(ChainlessError):
    pass


class UnknownBlock(ChainlessError):
    pass


class PreStateMismatch(ChainlessError):
    pass


class InsufficientValidators(ChainlessError):
    pass


class InvalidAmount(ChainlessError):
    pass


class InsufficientFunds(ChainlessError):
    """A plain chain account cannot cover a debit."""


class DoubleClaim(ChainlessError):
    pass


class StaleOrInvalidProof(ChainlessError):
    pass


class PessimisticViolation(ChainlessError):
    pass


class MissingChain(ChainlessError):
    pass


class DuplicateDelivery(ChainlessError):
    pass


class NonAcceptedReceipt(ChainlessError):
    pass


class DigestMismatch(ChainlessError):
    pass


class ContinuityViolation(ChainlessError):
    pass


class FinalityViolation(ChainlessError):
    pass


class UnknownApp(ChainlessError):
    pass


class UnknownReference(ChainlessError):
    pass


class DataUnavailable(ChainlessError):
    pass


class IntegrityError(ChainlessError):
    pass


class ScenarioError(ChainlessError):
    """Scenario parse or validation failure; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
