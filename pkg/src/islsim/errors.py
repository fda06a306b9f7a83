"""Error types shared across the simulator.

Class names double as wire identifiers: contract reverts carry
``"<Name>: <detail>"`` reasons and the CLI prints the same form on stderr,
so renaming a class here is a breaking change.
"""

from __future__ import annotations


class IslError(Exception):
    """Base class for every simulator error."""


# storage / knowledge graph
class NotFound(IslError): ...
class DuplicateId(IslError): ...
class MalformedTriple(IslError): ...
class MalformedDescriptor(IslError): ...
class UnresolvedDependency(IslError): ...
class AlreadyShared(IslError): ...
class ParseError(IslError): ...


# ledger
class UnknownSender(IslError): ...
class InsufficientFunds(IslError): ...
class CorruptLog(IslError): ...


# contracts
class Unauthorized(IslError): ...
class AlreadyRegistered(IslError): ...
class IncompleteChain(IslError): ...
class UnknownResource(IslError): ...
class WrongPayment(IslError): ...


# dependency graph
class DuplicateModel(IslError): ...
class UnknownBase(IslError): ...
class UnknownModel(IslError): ...


# ml layer
class RankDeficient(IslError): ...
class TooFewRows(IslError): ...
class FeatureMismatch(IslError): ...
class EmptyDataset(IslError): ...
class DimensionMismatch(IslError): ...


# node / cli workflows
class TokenRejected(IslError): ...
class IntegrityFailure(IslError): ...
class UnknownWorkspace(IslError): ...


BY_NAME: dict[str, type[IslError]] = {
    cls.__name__: cls
    for cls in list(globals().values())
    if isinstance(cls, type) and issubclass(cls, IslError) and cls is not IslError
}


def from_reason(reason: str) -> IslError:
    """Turn a revert reason ``"Name: detail"`` back into a typed error."""
    name, _, detail = reason.partition(":")
    cls = BY_NAME.get(name.strip())
    if cls is None:
        return IslError(reason)
    return cls(detail.strip() or reason)
