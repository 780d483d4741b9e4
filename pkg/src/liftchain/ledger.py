"""Per-node chain: append preliminaries, encrypt lifted parts, detect tampering.

A chain holds encrypted blocks next to the public record of the unit-norm
preliminary vectors they were lifted from.  The first n coordinates of each
block (the disclosed part) are exactly the preliminary and stay in the
computational basis; the m_max lifted coordinates are rotated by the node's
secret key, a tensor power of a 2x2 angle unitary treating the lifted
subspace as q = log2(m_max) qubits.

Validation re-checks, per block: disclosed part against the public
preliminary, decodability of the carried transactions, and (when the
caller owns the key) pairwise orthogonality and common norm of the
decrypted blocks.  A single failing block invalidates the whole suffix,
which is the executable form of the append-only security argument: the
lifted coordinates of every block depend on all blocks before it.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .encoding import Transaction, decode_preliminary_block
from .errors import (
    CapacityExceeded,
    DimensionMismatch,
    IndexOutOfRange,
    MalformedEncoding,
    NotUnitNorm,
)
from .lifting import LiftingParams, LiftingWorkspace, as_state
from .serialize import canonical_json, vector_to_pairs

UNIT_TOL = 1e-9
DISCLOSED_TOL = 1e-9
ORTHO_TOL = 1e-9

LEDGER_FORMAT = "liftchain-ledger/1"


@dataclass(frozen=True)
class ChainParams:
    """Chain geometry fixed at genesis.

    The radius must exceed sqrt(m_max): the stacked matrix of up to m_max
    unit-norm preliminaries has spectral norm at most sqrt(m_max), so this
    floor guarantees every append up to capacity succeeds.  The default is
    2*sqrt(m_max) for a comfortable margin.
    """

    n: int
    m_max: int
    r: float

    def __post_init__(self):
        lp = LiftingParams(self.n, self.m_max, self.r)  # shape validation
        if self.r <= math.sqrt(self.m_max):
            raise ValueError(
                f"chain radius {self.r} must exceed sqrt(m_max) = {math.sqrt(self.m_max):.6g}"
            )
        object.__setattr__(self, "_lifting", lp)

    @classmethod
    def default(cls, n: int, m_max: int) -> "ChainParams":
        return cls(n=n, m_max=m_max, r=2.0 * math.sqrt(m_max))

    @property
    def q(self) -> int:
        return self.m_max.bit_length() - 1

    @property
    def block_dim(self) -> int:
        return self.n + self.m_max

    @property
    def lifting(self) -> LiftingParams:
        return self._lifting


@dataclass(frozen=True)
class EncryptionKey:
    """Secret angle in [0, pi].  Never serialized; repr is masked so the
    value cannot leak through logs."""

    theta: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= math.pi):
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")

    def __repr__(self):
        return "EncryptionKey(<secret>)"


@functools.lru_cache(maxsize=64)
def _unitary_cached(theta: float, q: int) -> np.ndarray:
    base = np.array(
        [[1.0, 1.0], [np.exp(1j * theta), -np.exp(1j * theta)]], dtype=np.complex128
    ) / math.sqrt(2.0)
    out = base
    for _ in range(q - 1):
        out = np.kron(out, base)
    out.setflags(write=False)
    return out


def make_encryption_unitary(key: EncryptionKey, q: int) -> np.ndarray:
    """q-fold tensor power of the 2x2 unitary whose columns are
    (|0> + e^{i theta}|1>)/sqrt(2) and (|0> - e^{i theta}|1>)/sqrt(2)."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    return _unitary_cached(key.theta, q).copy()


def encrypt_block(block_vec, key: EncryptionKey, params: ChainParams) -> np.ndarray:
    """Rotate the lifted coordinates; the disclosed part is copied bitwise."""
    w = as_state(block_vec, params.block_dim)
    out = w.copy()
    out[params.n :] = _unitary_cached(key.theta, params.q) @ w[params.n :]
    return out


def decrypt_block(enc_vec, key: EncryptionKey, params: ChainParams) -> np.ndarray:
    """Inverse rotation on the lifted coordinates."""
    w = as_state(enc_vec, params.block_dim)
    out = w.copy()
    out[params.n :] = _unitary_cached(key.theta, params.q).conj().T @ w[params.n :]
    return out


@dataclass(frozen=True)
class ValidationReport:
    """ok, or the 1-based index of the first invalid block.  Every block at
    or after that index is invalid: later lifted parts are functions of the
    earlier blocks."""

    ok: bool
    first_invalid_index: int | None = None
    reasons: tuple[str, ...] = ()


class Chain:
    """Append-only ledger owned by a single node (single writer)."""

    def __init__(self, params: ChainParams):
        self.params = params
        self.workspace = LiftingWorkspace(params.lifting)
        self.blocks: list[np.ndarray] = []
        self.preliminaries: list[np.ndarray] = []
        self.timestamps: list[int] = []

    @property
    def length(self) -> int:
        return len(self.blocks)

    def append(self, preliminary, key: EncryptionKey, timestamp: int = 0) -> np.ndarray:
        """Lift the unit-norm preliminary, encrypt, and store both records.

        Returns the stored encrypted block.  Raises NotUnitNorm and
        CapacityExceeded.
        """
        vec = as_state(preliminary, self.params.n)
        if abs(float(np.linalg.norm(vec)) - 1.0) > UNIT_TOL:
            raise NotUnitNorm(f"preliminary norm {np.linalg.norm(vec):.12g} != 1")
        if self.length >= self.params.m_max:
            raise CapacityExceeded(f"chain is at capacity {self.params.m_max}")
        block = self.workspace.append(vec)
        enc = encrypt_block(block.full, key, self.params)
        self.blocks.append(enc)
        self.preliminaries.append(vec.copy())
        self.timestamps.append(int(timestamp))
        return enc

    def raw_block(self, i: int) -> np.ndarray:
        """Unencrypted block i (1-based), reconstructed exactly from the
        workspace factor; no floating-point decryption noise."""
        if not 1 <= i <= self.length:
            raise IndexOutOfRange(f"block {i} of {self.length}")
        full = np.zeros(self.params.block_dim, dtype=np.complex128)
        full[: self.params.n] = self.preliminaries[i - 1]
        full[self.params.n :] = self.workspace.lifted_column(i - 1)
        return full

    def read_block(self, i: int) -> list[Transaction]:
        """Decode the confirmed transactions of block i from the disclosed
        part alone; works on any node's copy without the owner's key."""
        if not 1 <= i <= self.length:
            raise IndexOutOfRange(f"block {i} of {self.length}")
        return decode_preliminary_block(self.blocks[i - 1][: self.params.n])

    def validate(self, key: EncryptionKey | None = None) -> ValidationReport:
        """Tamper check; with the owner's key the encrypted parts are also
        checked for pairwise orthogonality and common norm."""
        n = self.params.n
        r = self.params.r
        failures: dict[int, str] = {}

        def flag(idx: int, reason: str) -> None:
            if idx not in failures:
                failures[idx] = reason

        for i in range(1, self.length + 1):
            enc = self.blocks[i - 1]
            prelim = self.preliminaries[i - 1]
            if enc.shape[0] != self.params.block_dim or prelim.shape[0] != n:
                flag(i, f"block {i}: stored dimensions are wrong")
                continue
            if float(np.max(np.abs(enc[:n] - prelim))) > DISCLOSED_TOL:
                flag(i, f"block {i}: disclosed part does not match the public preliminary")
            else:
                try:
                    txs = decode_preliminary_block(enc[:n])
                    if not txs:
                        flag(i, f"block {i}: empty transaction list")
                except MalformedEncoding as exc:
                    flag(i, f"block {i}: transactions do not decode ({exc})")
        if key is not None and self.length:
            dec = [decrypt_block(b, key, self.params) for b in self.blocks]
            for i, w in enumerate(dec, start=1):
                if abs(float(np.linalg.norm(w)) - r) > ORTHO_TOL * r:
                    flag(i, f"block {i}: decrypted norm deviates from r")
            localized = set(failures)
            for j in range(self.length):
                for i in range(j):
                    if abs(np.vdot(dec[i], dec[j])) > ORTHO_TOL * r * r:
                        # A failing pair with a localized culprit adds nothing;
                        # otherwise blame the earlier block (conservative).
                        if i + 1 in localized or j + 1 in localized:
                            continue
                        flag(i + 1, f"blocks {i + 1},{j + 1}: decrypted blocks not orthogonal")
        if not failures:
            return ValidationReport(ok=True)
        first = min(failures)
        reasons = tuple(failures[k] for k in sorted(failures))
        return ValidationReport(ok=False, first_invalid_index=first, reasons=reasons)

    def dump_dict(self) -> dict:
        """Structured ledger dump; contains no key material by schema."""
        records = []
        for i in range(1, self.length + 1):
            try:
                tx_list = [tx_to_dict(t) for t in self.read_block(i)]
            except MalformedEncoding:
                tx_list = []
            records.append(
                {
                    "index": i,
                    "timestamp": self.timestamps[i - 1],
                    "disclosed": vector_to_pairs(self.preliminaries[i - 1]),
                    "encrypted": vector_to_pairs(self.blocks[i - 1]),
                    "tx_list": tx_list,
                }
            )
        return {
            "format": LEDGER_FORMAT,
            "params": {
                "n": self.params.n,
                "m_max": self.params.m_max,
                "r": self.params.r,
                "q": self.params.q,
            },
            "length": self.length,
            "blocks": records,
        }

    def dump_json(self) -> str:
        return canonical_json(self.dump_dict())


def tx_to_dict(tx: Transaction) -> dict:
    return {
        "sender": tx.sender,
        "receivers": list(tx.receivers),
        "amount": tx.amount,
        "sources": list(tx.sources),
        "timestamp": tx.timestamp,
        "signature": tx.signature.hex(),
    }


def tx_from_dict(doc: dict) -> Transaction:
    try:
        return Transaction(
            sender=doc["sender"],
            receivers=tuple(doc["receivers"]),
            amount=int(doc["amount"]),
            sources=tuple(doc["sources"]),
            timestamp=int(doc["timestamp"]),
            signature=bytes.fromhex(doc["signature"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedEncoding(f"invalid transaction record: {exc}") from exc


def rebuild_chain(params: ChainParams, preliminaries, key: EncryptionKey,
                  timestamps=None) -> Chain:
    """Deterministically reconstruct a chain from its public record,
    encrypting under the given key.  Identical preliminaries always yield
    identical raw blocks (uniqueness of the incremental construction)."""
    chain = Chain(params)
    if timestamps is None:
        timestamps = [0] * len(preliminaries)
    for vec, ts in zip(preliminaries, timestamps):
        chain.append(vec, key, timestamp=ts)
    return chain
