"""Canonical transaction serialization and the amplitude codec.

Wire format (normative, byte-exact): length-prefixed fields in fixed order
sender, receivers, amount, sources, timestamp, signature.  Strings are
UTF-8 with a big-endian u32 length; lists carry a u32 count first; amount
and timestamp are big-endian u64; source identifiers travel as their raw
16 digest bytes.

The codec from bytes to amplitudes puts a sentinel 1 in coordinate 0 and
(byte + 1)/257 in the following coordinates before unit-normalizing, so a
decoder can recover the scale from the sentinel and invert exactly.  Zero
padding is distinguishable from data because the smallest byte amplitude
is 1/257.

Basis-label helpers treat a dimension-2^n vector as n qubits whose basis
kets are indexed lexicographically: index 11 in 5 qubits is "01011".
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyBlock,
    IndexOutOfRange,
    MalformedEncoding,
    NotPowerOfTwoDim,
    PayloadTooLarge,
)
from .serialize import sha256_hex

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

#: Identifiers are truncated sha256 digests: 32 hex characters, 16 bytes.
ID_HEX_LEN = 32
#: Byte values map to (byte + 1)/257 before normalization.
BYTE_SCALE = 257
_SENTINEL_MIN = 1e-9
_ROUND_SLACK = 1e-6


@dataclass(frozen=True)
class Transaction:
    """A signed value transfer.

    receivers[0] is the payee of ``amount``; additional receivers only
    widen the membership test used by source verification.  ``sources``
    lists identifiers of confirmed transactions being redeemed; only
    coinbase grants may leave it empty.  ``timestamp`` is a logical
    simulation tick.
    """

    sender: str
    receivers: tuple[str, ...]
    amount: int
    sources: tuple[str, ...] = ()
    timestamp: int = 0
    signature: bytes = b""

    def __post_init__(self):
        if not self.sender:
            raise ValueError("sender must be non-empty")
        if not self.receivers or any(not r for r in self.receivers):
            raise ValueError("receivers must be a non-empty list of identifiers")
        if not isinstance(self.amount, int) or self.amount < 0 or self.amount >= 2**64:
            raise ValueError(f"amount must be a u64 integer, got {self.amount!r}")
        for src in self.sources:
            if len(src) != ID_HEX_LEN or any(c not in "0123456789abcdef" for c in src):
                raise ValueError(f"source id must be {ID_HEX_LEN} lowercase hex chars: {src!r}")
        if not isinstance(self.timestamp, int) or self.timestamp < 0 or self.timestamp >= 2**64:
            raise ValueError(f"timestamp must be a u64 integer, got {self.timestamp!r}")

    @property
    def payee(self) -> str:
        return self.receivers[0]

    @property
    def is_coinbase(self) -> bool:
        return not self.sources

    def with_signature(self, tag: bytes) -> "Transaction":
        return Transaction(
            sender=self.sender,
            receivers=self.receivers,
            amount=self.amount,
            sources=self.sources,
            timestamp=self.timestamp,
            signature=tag,
        )


def _pack_str(chunks: list, text: str) -> None:
    raw = text.encode("utf-8")
    chunks.append(_U32.pack(len(raw)))
    chunks.append(raw)


def canonical_tx_bytes(tx: Transaction, include_signature: bool = True) -> bytes:
    """Normative byte serialization; signing covers the form without the
    signature field."""
    chunks: list[bytes] = []
    _pack_str(chunks, tx.sender)
    chunks.append(_U32.pack(len(tx.receivers)))
    for r in tx.receivers:
        _pack_str(chunks, r)
    chunks.append(_U64.pack(tx.amount))
    chunks.append(_U32.pack(len(tx.sources)))
    for s in tx.sources:
        raw = bytes.fromhex(s)
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)
    chunks.append(_U64.pack(tx.timestamp))
    if include_signature:
        chunks.append(_U32.pack(len(tx.signature)))
        chunks.append(tx.signature)
    return b"".join(chunks)


@functools.lru_cache(maxsize=None)
def transaction_id(tx: Transaction) -> str:
    """Truncated digest of the full serialization, used as source reference."""
    return sha256_hex(canonical_tx_bytes(tx))[:ID_HEX_LEN]


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedEncoding("truncated payload")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def string(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedEncoding("invalid UTF-8 in payload") from exc

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def _read_tx(reader: _Reader) -> Transaction:
    sender = reader.string()
    receivers = tuple(reader.string() for _ in range(reader.u32()))
    amount = reader.u64()
    sources = tuple(reader.take(reader.u32()).hex() for _ in range(reader.u32()))
    timestamp = reader.u64()
    signature = reader.take(reader.u32())
    try:
        return Transaction(
            sender=sender,
            receivers=receivers,
            amount=amount,
            sources=sources,
            timestamp=timestamp,
            signature=signature,
        )
    except ValueError as exc:
        raise MalformedEncoding(f"invalid transaction fields: {exc}") from exc


def parse_tx_bytes(data: bytes) -> Transaction:
    reader = _Reader(data)
    tx = _read_tx(reader)
    if not reader.exhausted:
        raise MalformedEncoding("trailing bytes after transaction")
    return tx


# --- amplitude codec ---

def _payload_to_vector(payload: bytes, n: int) -> np.ndarray:
    if 1 + len(payload) > n:
        raise PayloadTooLarge(f"payload of {len(payload)} bytes needs {1 + len(payload)} "
                              f"amplitude slots, vector has {n}")
    x = np.zeros(n, dtype=np.float64)
    x[0] = 1.0
    if payload:
        x[1 : 1 + len(payload)] = (np.frombuffer(payload, dtype=np.uint8) + 1.0) / BYTE_SCALE
    x /= np.linalg.norm(x)
    return x.astype(np.complex128)


def _vector_to_payload(vec) -> bytes:
    v = np.asarray(vec, dtype=np.complex128)
    if v.ndim != 1 or v.size < 1:
        raise MalformedEncoding("expected a non-empty vector")
    sentinel = v[0]
    if abs(sentinel) <= _SENTINEL_MIN:
        raise MalformedEncoding("sentinel amplitude vanished")
    a = v / sentinel
    if np.max(np.abs(a.imag)) > _ROUND_SLACK:
        raise MalformedEncoding("payload amplitudes are not real after rescaling")
    a = a.real
    data = bytearray()
    in_padding = False
    for x in a[1:]:
        value = BYTE_SCALE * x - 1.0
        k = round(value)
        if abs(value - k) > _ROUND_SLACK:
            raise MalformedEncoding(f"amplitude {x!r} is not on the byte lattice")
        if k == -1:
            in_padding = True
            continue
        if in_padding:
            raise MalformedEncoding("data amplitude after padding started")
        if not 0 <= k <= 255:
            raise MalformedEncoding(f"recovered byte {k} outside 0..255")
        data.append(k)
    return bytes(data)


def encode_transaction(tx: Transaction, n: int) -> np.ndarray:
    """Deterministic unit-norm vector in C^n carrying the transaction."""
    return _payload_to_vector(canonical_tx_bytes(tx), n)


def decode_transaction(vec) -> Transaction:
    """Invert encode_transaction; tolerant of any overall (real) rescaling."""
    return parse_tx_bytes(_vector_to_payload(vec))


def sort_block_transactions(txs) -> list[Transaction]:
    """Canonical in-block order: (timestamp, transaction id)."""
    return sorted(txs, key=lambda t: (t.timestamp, transaction_id(t)))


def block_payload(txs) -> bytes:
    ordered = sort_block_transactions(txs)
    chunks = [_U32.pack(len(ordered))]
    chunks.extend(canonical_tx_bytes(t) for t in ordered)
    return b"".join(chunks)


def encode_preliminary_block(txs, n: int) -> np.ndarray:
    """Aggregate transactions into one unit-norm preliminary block vector.

    Transactions are sorted canonically first, so any input order yields
    the same vector.
    """
    txs = list(txs)
    if not txs:
        raise EmptyBlock("a preliminary block needs at least one transaction")
    return _payload_to_vector(block_payload(txs), n)


def decode_preliminary_block(vec) -> list[Transaction]:
    """Invert encode_preliminary_block, returning the canonical order."""
    reader = _Reader(_vector_to_payload(vec))
    count = reader.u32()
    if count < 1:
        raise MalformedEncoding("block transaction count must be >= 1")
    txs = [_read_tx(reader) for _ in range(count)]
    if not reader.exhausted:
        raise MalformedEncoding("trailing bytes after block transactions")
    return txs


def block_fits(txs, n: int) -> bool:
    """Whether the canonical block payload fits an n-amplitude vector."""
    return 1 + len(block_payload(txs)) <= n


# --- lexicographic qubit basis labels ---

def index_to_basis_label(i: int, n: int) -> str:
    """n-digit big-endian binary label of basis index i."""
    if not isinstance(i, int) or not isinstance(n, int) or n < 1:
        raise IndexOutOfRange(f"invalid index/qubit count ({i!r}, {n!r})")
    if not 0 <= i < 2**n:
        raise IndexOutOfRange(f"index {i} outside [0, 2^{n})")
    return format(i, f"0{n}b")


def basis_label_to_index(bits: str) -> int:
    """Inverse of index_to_basis_label."""
    if not bits or any(c not in "01" for c in bits):
        raise IndexOutOfRange(f"invalid basis label {bits!r}")
    return int(bits, 2)


def vector_to_ket_expansion(vec) -> list[tuple[str, complex]]:
    """Nonzero (label, amplitude) terms of a 2^n-dimensional vector, in
    index order.  Amplitudes with magnitude <= 1e-15 are dropped."""
    v = np.asarray(vec, dtype=np.complex128)
    if v.ndim != 1:
        raise NotPowerOfTwoDim(f"expected a vector, got shape {v.shape}")
    dim = v.size
    if dim < 2 or dim & (dim - 1):
        raise NotPowerOfTwoDim(f"dimension {dim} is not a power of two")
    n = dim.bit_length() - 1
    return [
        (index_to_basis_label(i, n), complex(v[i])) for i in range(dim) if abs(v[i]) > 1e-15
    ]


def ket_expansion_to_vector(terms, n: int) -> np.ndarray:
    """Rebuild the vector from (label, amplitude) terms."""
    v = np.zeros(2**n, dtype=np.complex128)
    for label, amp in terms:
        if len(label) != n:
            raise IndexOutOfRange(f"label {label!r} is not {n} digits")
        v[basis_label_to_index(label)] = amp
    return v


def ket_string(label: str) -> str:
    """Pretty form of a basis label, e.g. '01011' -> '|0>|1>|0>|1>|1>'."""
    return "".join(f"|{c}>" for c in label)
