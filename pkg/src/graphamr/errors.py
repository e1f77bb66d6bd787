"""Exception types shared across the package."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class ShapeError(ContractError):
    """Operand extents do not agree."""


class DomainError(ContractError):
    """An input lies outside the domain of a mathematical function."""


class ConnectivityError(ContractError):
    """An unlabeled component has no path to any labeled node."""


class StratificationError(ContractError):
    """Not enough records to build a stratified split."""


class InvariantError(RuntimeError):
    """An internal invariant check failed (bug, not bad input)."""
