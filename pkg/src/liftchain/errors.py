"""Exception hierarchy shared by every liftchain subsystem."""


class LiftChainError(Exception):
    """Base class for all liftchain errors."""


# --- lifting core ---

class DimensionMismatch(LiftChainError):
    """Vector or matrix dimensions are incompatible with the operation."""


class LinearDependence(LiftChainError):
    """Classic Gram-Schmidt hit a residual below the pivot tolerance."""


class RadiusTooSmall(LiftChainError):
    """Lifting radius does not exceed the spectral norm of the stacked inputs."""


class CapacityExceeded(LiftChainError):
    """No lifted dimensions left: the chain or workspace is full."""


class PivotFailure(LiftChainError):
    """Incremental Cholesky pivot collapsed; radius too small for the inputs."""


class NotPSD(LiftChainError):
    """Matrix has an eigenvalue below the negative-noise floor."""


class NotOrthonormal(LiftChainError):
    """Input columns are not orthonormal within tolerance."""


class NotOrthogonal(LiftChainError):
    """Input vectors are not pairwise orthogonal within tolerance."""


# --- encoding ---

class IndexOutOfRange(LiftChainError):
    """Index outside the valid range (basis labels, block numbers)."""


class NotPowerOfTwoDim(LiftChainError):
    """Vector dimension is not a power of two."""


class PayloadTooLarge(LiftChainError):
    """Serialized payload does not fit the configured vector dimension."""


class MalformedEncoding(LiftChainError):
    """Vector does not decode to a valid payload."""


class EmptyBlock(LiftChainError):
    """A preliminary block must contain at least one transaction."""


# --- ledger ---

class NotUnitNorm(LiftChainError):
    """Preliminary vector is not unit norm within tolerance."""


# --- network / consensus ---

class UnknownSigner(LiftChainError):
    """Claimed sender has no registered signing key."""


class SampleTooLarge(LiftChainError):
    """Requested voter sample exceeds the available peers."""


class EmptyLog(LiftChainError):
    """Proposer has no unconfirmed transactions to assemble."""


class InsufficientFunds(LiftChainError):
    """Sender's unspent outputs do not cover the requested amount."""


class ChainMismatch(LiftChainError):
    """Chains disagree on prefix, length, or orthogonality preconditions."""


class TransactionSetMismatch(LiftChainError):
    """Chains carry different confirmed transactions beyond the shared prefix."""


# --- tokens ---

class UnconfirmedBlock(LiftChainError):
    """Referenced block index is not confirmed in the chain."""


class AlreadyMinted(LiftChainError):
    """A token for this block and owner was already issued."""


class NoValueForOwner(LiftChainError):
    """Block grants no positive amount to the requested owner."""


class InvalidToken(LiftChainError):
    """Token failed verification and cannot be transferred."""


# --- cli / scenario ---

class ConfigInvalid(LiftChainError):
    """Scenario configuration failed schema or consistency validation."""


class MalformedDump(LiftChainError):
    """Ledger dump file is truncated or structurally invalid."""
