"""Deterministic discrete-event simulation of the peer network.

One seeded ``random.Random`` instance drives everything observable: node
secrets, broadcast delivery coin flips, per-link latencies, and voter
sampling.  Events are totally ordered by (delivery tick, sequence number),
so identical seed and settings give identical runs byte for byte.

Value model: a transaction's amount goes to receivers[0].  A spend is a
*group* of transactions sharing (sender, sources, timestamp) - typically a
payment plus a change transaction back to the sender - and a group may
redeem its sources up to their combined confirmed value.  Two transactions
conflict when they redeem a common source from different groups, or when a
group tries to spend more than its sources hold; each node keeps the first
version it received (the consensus decides the survivor network-wide).

Verification applies four rules in order: (1) the signature verifies under
the claimed sender's registered key; (2) the sender is listed among the
receivers of every source transaction; (3) every source is confirmed in
the local chain; (4) no source is redeemed by a different group and the
group total stays within its sources.
"""

from __future__ import annotations

import heapq
import hmac as hmac_mod
import hashlib
import math
import random
from dataclasses import dataclass, field

import numpy as np

from .encoding import (
    Transaction,
    block_fits,
    canonical_tx_bytes,
    decode_preliminary_block,
    encode_preliminary_block,
    sort_block_transactions,
    transaction_id,
)
from .errors import (
    ChainMismatch,
    EmptyLog,
    InsufficientFunds,
    SampleTooLarge,
    TransactionSetMismatch,
    UnknownSigner,
)
from .fork import build_fork_operator
from .ledger import Chain, ChainParams, EncryptionKey, rebuild_chain, tx_from_dict, tx_to_dict
from .serialize import payload_digest, sha256_hex

GENESIS_ID = "genesis"
SIGNATURE_LEN = 16
FORK_TOL = 1e-9


def sign_bytes(secret: bytes, message: bytes) -> bytes:
    return hmac_mod.new(secret, message, hashlib.sha256).digest()[:SIGNATURE_LEN]


def sign_transaction(tx: Transaction, secret: bytes) -> Transaction:
    """Deterministic keyed tag over the serialization without the signature."""
    return tx.with_signature(sign_bytes(secret, canonical_tx_bytes(tx, include_signature=False)))


def verify_signature(tx: Transaction, registry: dict[str, bytes]) -> bool:
    """True iff the tag matches under the claimed sender's registered key."""
    if tx.sender not in registry:
        raise UnknownSigner(f"no registered key for {tx.sender!r}")
    expected = sign_bytes(registry[tx.sender], canonical_tx_bytes(tx, include_signature=False))
    return hmac_mod.compare_digest(expected, tx.signature)


def group_key(tx: Transaction) -> tuple:
    """Transactions sharing (sender, sources, timestamp) spend together."""
    return (tx.sender, tx.sources, tx.timestamp)


@dataclass(frozen=True)
class Verdict:
    ok: bool
    rule: int | None = None
    reason: str = ""


VALID = Verdict(True)


@dataclass(frozen=True)
class ConsensusConfig:
    sample_size: int
    approve_threshold: float = 1.0
    block_size: int = 4

    def __post_init__(self):
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if not 0.0 < self.approve_threshold <= 1.0:
            raise ValueError("approve_threshold must lie in (0, 1]")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")


@dataclass(frozen=True)
class NetworkSettings:
    node_names: tuple[str, ...]
    consensus: ConsensusConfig
    n: int = 256
    m_max: int = 16
    r: float | None = None
    delivery_prob: float = 1.0
    latency_min: int = 1
    latency_max: int = 2
    genesis_grants: tuple[tuple[str, int], ...] = ()
    seed: int = 0

    def __post_init__(self):
        if len(self.node_names) < 2:
            raise ValueError("need at least two nodes")
        if len(set(self.node_names)) != len(self.node_names):
            raise ValueError("node names must be unique")
        if GENESIS_ID in self.node_names:
            raise ValueError(f"node name {GENESIS_ID!r} is reserved")
        if self.consensus.sample_size > len(self.node_names) - 1:
            raise ValueError("sample_size exceeds the number of peers")
        if not 0.0 <= self.delivery_prob <= 1.0:
            raise ValueError("delivery_prob must lie in [0, 1]")
        if not 1 <= self.latency_min <= self.latency_max:
            raise ValueError("latency bounds must satisfy 1 <= min <= max")
        for name, amount in self.genesis_grants:
            if name not in self.node_names:
                raise ValueError(f"genesis grant to unknown node {name!r}")
            if amount < 1:
                raise ValueError("genesis grants must be positive")


class LedgerView:
    """Pure function of a chain's contents: confirmed transactions, spent
    sources, group totals, and the disclosed record digest sequence."""

    def __init__(self, chain: Chain):
        self.confirmed: dict[str, Transaction] = {}
        self.position: dict[str, tuple[int, int]] = {}
        self.spent_by: dict[str, list[tuple]] = {}
        self.group_confirmed: dict[tuple, int] = {}
        self.block_tx_ids: list[tuple[str, ...]] = []
        digests = []
        for bi in range(1, chain.length + 1):
            txs = chain.read_block(bi)
            ids = []
            for pos, tx in enumerate(txs):
                tid = transaction_id(tx)
                ids.append(tid)
                self.confirmed[tid] = tx
                self.position[tid] = (bi, pos)
                g = group_key(tx)
                self.group_confirmed[g] = self.group_confirmed.get(g, 0) + tx.amount
                for src in tx.sources:
                    groups = self.spent_by.setdefault(src, [])
                    if g not in groups:
                        groups.append(g)
            self.block_tx_ids.append(tuple(ids))
            digests.append(sha256_hex(chain.preliminaries[bi - 1].tobytes())[:16])
        self.record: tuple[str, ...] = tuple(digests)

    def unspent(self) -> dict[str, tuple[str, int]]:
        return {
            tid: (tx.payee, tx.amount)
            for tid, tx in self.confirmed.items()
            if tid not in self.spent_by
        }

    def balance(self, owner: str) -> int:
        return sum(amount for payee, amount in self.unspent().values() if payee == owner)

    def outputs_for(self, owner: str) -> list[tuple[str, int]]:
        """Unspent (id, amount) owned by ``owner``, oldest first."""
        entries = [
            (self.position[tid], tid, amount)
            for tid, (payee, amount) in self.unspent().items()
            if payee == owner
        ]
        entries.sort()
        return [(tid, amount) for _, tid, amount in entries]

    def total_supply(self) -> int:
        return sum(amount for _, amount in self.unspent().values())


class NodeState:
    """One peer: its chain, secret key material, and mempool."""

    def __init__(self, name: str, chain: Chain, key: EncryptionKey, signing_secret: bytes):
        self.id = name
        self.chain = chain
        self.key = key
        self.signing_secret = signing_secret
        self.log: dict[str, Transaction] = {}
        self.tampered = False
        self._view: LedgerView | None = None
        self._view_key: tuple | None = None

    @property
    def view(self) -> LedgerView:
        key = (id(self.chain), self.chain.length)
        if self._view is None or self._view_key != key:
            self._view = LedgerView(self.chain)
            self._view_key = key
        return self._view

    def invalidate_view(self) -> None:
        self._view = None
        self._view_key = None


@dataclass(frozen=True)
class Decision:
    accepted: bool
    txs: tuple[Transaction, ...] = ()
    approvals: int = 0
    voters: tuple[str, ...] = ()


class SimNetwork:
    """Single-threaded deterministic simulator; owns every node state."""

    def __init__(self, settings: NetworkSettings):
        self.settings = settings
        self.config = settings.consensus
        self.rng = random.Random(settings.seed)
        self.clock = 0
        self._seq = 0
        self._queue: list[tuple[int, int, str, str, dict]] = []
        self.events: list[dict] = []
        self.counters = {
            "blocks_confirmed": 0,
            "forks_resolved": 0,
            "tamper_detections": 0,
            "invariant_failures": 0,
        }
        self.tamper_reports: list[dict] = []
        self.partitions: list[tuple[int, int, frozenset]] = []
        self._proposer_idx = 0

        r = settings.r if settings.r is not None else 2.0 * math.sqrt(settings.m_max)
        self.params = ChainParams(n=settings.n, m_max=settings.m_max, r=r)

        self.registry: dict[str, bytes] = {GENESIS_ID: self.rng.randbytes(16)}
        self.nodes: dict[str, NodeState] = {}
        for name in settings.node_names:
            secret = self.rng.randbytes(16)
            theta = self.rng.uniform(0.0, math.pi)
            self.registry[name] = secret
            self.nodes[name] = NodeState(name, Chain(self.params), EncryptionKey(theta), secret)
        self.node_order = list(settings.node_names)

        self._install_genesis()

    # --- bookkeeping ---

    def event(self, node: str, kind: str, payload) -> None:
        self.events.append(
            {
                "tick": self.clock,
                "node": node,
                "event": kind,
                "payload_digest": payload_digest(payload),
            }
        )

    def _install_genesis(self) -> None:
        grants = self.settings.genesis_grants
        if not grants:
            return
        txs = []
        for owner, amount in grants:
            tx = Transaction(
                sender=GENESIS_ID, receivers=(owner,), amount=amount, sources=(), timestamp=0
            )
            txs.append(sign_transaction(tx, self.registry[GENESIS_ID]))
        prelim = encode_preliminary_block(txs, self.params.n)
        for name in self.node_order:
            node = self.nodes[name]
            node.chain.append(prelim, node.key, timestamp=0)
        self.event("net", "genesis", {"grants": [[o, a] for o, a in grants]})

    # --- messaging ---

    def _blocked(self, a: str, b: str) -> bool:
        for start, until, group in self.partitions:
            if start <= self.clock < until and (a in group) != (b in group):
                return True
        return False

    def add_partition(self, members, until: int) -> None:
        self.partitions.append((self.clock, until, frozenset(members)))
        self.event("net", "partition", {"members": sorted(members), "until": until})

    def broadcast(self, origin: str, kind: str, payload: dict) -> list[str]:
        """Schedule delivery to every other node with probability
        delivery_prob and a per-link latency from the seeded RNG."""
        recipients = []
        for name in self.node_order:
            if name == origin:
                continue
            if self.rng.random() >= self.settings.delivery_prob:
                continue
            if self._blocked(origin, name):
                continue
            latency = self.rng.randint(self.settings.latency_min, self.settings.latency_max)
            self._seq += 1
            heapq.heappush(self._queue, (self.clock + latency, self._seq, name, kind, payload))
            recipients.append(name)
        return recipients

    def _send_direct(self, origin: str, target: str, kind: str, payload: dict) -> None:
        """Point-to-point authenticated channel: always delivered (subject
        to partitions), latency sampled like any link."""
        if self._blocked(origin, target):
            return
        latency = self.rng.randint(self.settings.latency_min, self.settings.latency_max)
        self._seq += 1
        heapq.heappush(self._queue, (self.clock + latency, self._seq, target, kind, payload))

    # --- transactions ---

    def create_transaction(self, sender: str, receiver: str, amount: int) -> list[Transaction]:
        """Payment plus change when the selected sources exceed the amount;
        sources are the sender's oldest unspent outputs not already
        committed by its own mempool."""
        if amount < 1:
            raise ValueError("amount must be >= 1")
        node = self.nodes[sender]
        committed = set()
        for logged in node.log.values():
            committed.update(logged.sources)
        selected: list[str] = []
        total = 0
        for tid, value in node.view.outputs_for(sender):
            if tid in committed:
                continue
            selected.append(tid)
            total += value
            if total >= amount:
                break
        if total < amount:
            raise InsufficientFunds(f"{sender} holds {total} uncommitted, needs {amount}")
        sources = tuple(selected)
        ts = self.clock
        txs = [
            sign_transaction(
                Transaction(sender=sender, receivers=(receiver,), amount=amount,
                            sources=sources, timestamp=ts),
                node.signing_secret,
            )
        ]
        if total > amount:
            txs.append(
                sign_transaction(
                    Transaction(sender=sender, receivers=(sender,), amount=total - amount,
                                sources=sources, timestamp=ts),
                    node.signing_secret,
                )
            )
        return txs

    def submit_transactions(self, origin: str, txs: list[Transaction]) -> None:
        """Log locally and broadcast the whole group as one message."""
        node = self.nodes[origin]
        for tx in txs:
            verdict = self.verify_transaction(tx, node)
            if verdict.ok:
                node.log[transaction_id(tx)] = tx
            self.event(origin, "tx_created", tx_to_dict(tx))
        self.broadcast(origin, "txs", {"txs": [tx_to_dict(t) for t in txs]})

    def send(self, sender: str, receiver: str, amount: int) -> list[Transaction]:
        txs = self.create_transaction(sender, receiver, amount)
        self.submit_transactions(sender, txs)
        return txs

    def double_spend(self, sender: str, first: str, second: str, amount: int) -> None:
        """Craft two conflicting payments redeeming the same sources and
        broadcast them as separate messages."""
        txs = self.create_transaction(sender, first, amount)
        conflicting = sign_transaction(
            Transaction(sender=sender, receivers=(second,), amount=amount,
                        sources=txs[0].sources, timestamp=self.clock),
            self.nodes[sender].signing_secret,
        )
        self.submit_transactions(sender, txs)
        self.event(sender, "tx_created", tx_to_dict(conflicting))
        self.broadcast(sender, "txs", {"txs": [tx_to_dict(conflicting)]})

    # --- verification ---

    def _verify(self, tx: Transaction, view: LedgerView, log: dict[str, Transaction]) -> Verdict:
        tid = transaction_id(tx)
        if tid in view.confirmed:
            return Verdict(False, 4, "transaction already confirmed")
        try:
            if not verify_signature(tx, self.registry):
                return Verdict(False, 1, "signature does not verify")
        except UnknownSigner:
            return Verdict(False, 1, "unknown signer")
        if tx.is_coinbase:
            return Verdict(False, 3, "coinbase grants cannot be broadcast")
        if len(set(tx.sources)) != len(tx.sources):
            return Verdict(False, 4, "duplicate source reference")
        for src in tx.sources:
            source_tx = view.confirmed.get(src)
            if source_tx is not None and tx.sender not in source_tx.receivers:
                return Verdict(False, 2, f"sender not among receivers of source {src}")
        for src in tx.sources:
            if src not in view.confirmed:
                return Verdict(False, 3, f"source {src} not confirmed locally")
        g = group_key(tx)
        for src in tx.sources:
            for other in view.spent_by.get(src, []):
                if other != g:
                    return Verdict(False, 4, f"source {src} already redeemed on chain")
            for logged in log.values():
                if transaction_id(logged) == tid:
                    continue
                if group_key(logged) != g and src in logged.sources:
                    return Verdict(False, 4, f"source {src} already committed in the log")
        available = sum(view.confirmed[src].amount for src in tx.sources)
        pending_same_group = sum(
            logged.amount
            for logged in log.values()
            if group_key(logged) == g and transaction_id(logged) != tid
        )
        committed = view.group_confirmed.get(g, 0) + pending_same_group + tx.amount
        if committed > available:
            return Verdict(False, 4, f"group spends {committed} of {available} available")
        return VALID

    def verify_transaction(self, tx: Transaction, node: NodeState) -> Verdict:
        """Four-rule check against the node's own chain and mempool."""
        return self._verify(tx, node.view, node.log)

    def handle_conflict(self, node: NodeState, incoming: Transaction,
                        existing: Transaction) -> list[Transaction]:
        """First-seen rule: both kept when compatible, otherwise the
        transaction that arrived first stays valid."""
        probe_log = {transaction_id(existing): existing}
        if self._verify(incoming, node.view, probe_log).ok:
            return [existing, incoming]
        return [existing]

    def _on_deliver_txs(self, name: str, payload: dict) -> None:
        node = self.nodes[name]
        for doc in payload["txs"]:
            tx = tx_from_dict(doc)
            tid = transaction_id(tx)
            self.event(name, "tx_delivered", doc)
            if tid in node.log or tid in node.view.confirmed:
                continue
            verdict = self.verify_transaction(tx, node)
            if verdict.ok:
                node.log[tid] = tx
            else:
                self.event(name, "tx_rejected", {"tx": tid, "rule": verdict.rule,
                                                 "reason": verdict.reason})

    # --- consensus ---

    def select_voters(self, proposer: str) -> list[str]:
        others = [n for n in self.node_order if n != proposer]
        k = self.config.sample_size
        if k > len(others):
            raise SampleTooLarge(f"sample_size {k} exceeds {len(others)} peers")
        return self.rng.sample(others, k)

    def _assemble_block(self, node: NodeState) -> list[Transaction] | None:
        """Whole spend groups in timestamp order, bounded by block_size and
        by the encoding capacity.  Groups that can never fit are evicted."""
        groups: dict[tuple, list[Transaction]] = {}
        for tx in node.log.values():
            groups.setdefault(group_key(tx), []).append(tx)
        ordered = sorted(
            groups.values(),
            key=lambda txs: (txs[0].timestamp, min(transaction_id(t) for t in txs)),
        )
        chosen: list[Transaction] = []
        for group in ordered:
            if len(group) > self.config.block_size or not block_fits(group, self.params.n):
                for tx in group:
                    node.log.pop(transaction_id(tx), None)
                    self.event(node.id, "tx_dropped_oversize", {"tx": transaction_id(tx)})
                continue
            candidate = chosen + group
            if len(candidate) > self.config.block_size:
                continue
            if not block_fits(candidate, self.params.n):
                continue
            chosen = candidate
        return chosen or None

    def run_consensus_round(self, proposer: str) -> Decision:
        """Propose, vote, decide; on accept the proposer links the block and
        broadcasts it, on reject a wrong-transaction notice goes out."""
        node = self.nodes[proposer]
        if not node.log:
            raise EmptyLog(f"{proposer} has no unconfirmed transactions")
        txs = self._assemble_block(node)
        if txs is None:
            return Decision(accepted=False)
        txs = sort_block_transactions(txs)
        tx_ids = [transaction_id(t) for t in txs]
        voters = self.select_voters(proposer)
        proposal = {
            "sender": proposer,
            "receivers": voters,
            "tx_ids": tx_ids,
            "tick": self.clock,
        }
        tag = sign_bytes(self.registry[proposer],
                         payload_digest(proposal).encode("ascii"))
        self.event(proposer, "block_proposed", proposal)

        approvals = 0
        rejecting: list[str] = []
        for voter in voters:
            vstate = self.nodes[voter]
            expected = sign_bytes(self.registry[proposal["sender"]],
                                  payload_digest(proposal).encode("ascii"))
            ok = hmac_mod.compare_digest(expected, tag)
            if ok:
                for tx in txs:
                    verdict = self.verify_transaction(tx, vstate)
                    if not verdict.ok:
                        ok = False
                        break
                    tid = transaction_id(tx)
                    if tid not in vstate.log and tid not in vstate.view.confirmed:
                        vstate.log[tid] = tx
            approvals += 1 if ok else 0
            if not ok:
                rejecting.append(voter)
            self.event(voter, "vote", {"proposal": payload_digest(proposal), "approve": ok})

        if approvals / len(voters) >= self.config.approve_threshold - 1e-12:
            prelim = encode_preliminary_block(txs, self.params.n)
            node.chain.append(prelim, node.key, timestamp=self.clock)
            self._after_local_append(node)
            self.counters["blocks_confirmed"] += 1
            block_msg = {
                "proposer": proposer,
                "tick": self.clock,
                "txs": [tx_to_dict(t) for t in txs],
            }
            self.event(proposer, "block_accepted", block_msg)
            self.broadcast(proposer, "block", block_msg)
            return Decision(accepted=True, txs=tuple(txs), approvals=approvals,
                            voters=tuple(voters))
        notice = {"proposer": proposer, "tick": self.clock, "tx_ids": tx_ids}
        self.event(proposer, "block_rejected", notice)
        self.broadcast(proposer, "notice", notice)
        # Re-broadcast the proposer's chain so voters missing a source block
        # can catch up; rejecting voters answer with their own record so a
        # stale proposer catches up too.
        self._broadcast_sync(proposer)
        for voter in rejecting:
            self._send_direct(voter, proposer, "sync", self._sync_payload(voter))
        return Decision(accepted=False, txs=tuple(txs), approvals=approvals,
                        voters=tuple(voters))

    def _after_local_append(self, node: NodeState) -> None:
        """Drop mempool entries that the new chain state invalidates."""
        node.invalidate_view()
        view = node.view
        kept: dict[str, Transaction] = {}
        for tid, tx in node.log.items():
            if tid in view.confirmed:
                continue
            if self._verify(tx, view, kept).ok:
                kept[tid] = tx
            else:
                self.event(node.id, "tx_evicted", {"tx": tid})
        node.log = kept

    def _on_deliver_block(self, name: str, payload: dict) -> None:
        node = self.nodes[name]
        txs = [tx_from_dict(doc) for doc in payload["txs"]]
        ids = tuple(transaction_id(t) for t in txs)
        self.event(name, "block_delivered", payload)
        if ids in node.view.block_tx_ids:
            return
        for tx in txs:
            verdict = self._verify(tx, node.view, {})
            if not verdict.ok:
                self.event(name, "block_ignored", {"tick": payload["tick"],
                                                   "rule": verdict.rule,
                                                   "reason": verdict.reason})
                return
        prelim = encode_preliminary_block(txs, self.params.n)
        node.chain.append(prelim, node.key, timestamp=payload["tick"])
        self._after_local_append(node)
        self.event(name, "block_appended", {"tick": payload["tick"], "tx_ids": list(ids)})

    def _sync_payload(self, origin: str) -> dict:
        node = self.nodes[origin]
        return {
            "origin": origin,
            "blocks": [
                {"txs": [tx_to_dict(t) for t in node.chain.read_block(i)],
                 "timestamp": node.chain.timestamps[i - 1]}
                for i in range(1, node.chain.length + 1)
            ],
        }

    def _broadcast_sync(self, origin: str) -> None:
        payload = self._sync_payload(origin)
        self.event(origin, "chain_sync_sent", {"length": len(payload["blocks"])})
        self.broadcast(origin, "sync", payload)

    def _on_deliver_sync(self, name: str, payload: dict) -> None:
        node = self.nodes[name]
        incoming = payload["blocks"]
        if len(incoming) <= node.chain.length:
            return
        own = node.view.block_tx_ids
        for i, record in enumerate(incoming[: len(own)]):
            ids = tuple(transaction_id(tx_from_dict(d)) for d in record["txs"])
            if ids != own[i]:
                return  # diverged: left for fork reconciliation
        appended = 0
        for record in incoming[len(own):]:
            txs = [tx_from_dict(d) for d in record["txs"]]
            if any(not self._verify(tx, node.view, {}).ok for tx in txs):
                break
            prelim = encode_preliminary_block(txs, self.params.n)
            node.chain.append(prelim, node.key, timestamp=record["timestamp"])
            self._after_local_append(node)
            appended += 1
        if appended:
            self.event(name, "chain_synced", {"appended": appended})

    # --- fork detection and reconciliation ---

    def reconcile_fork(self, node: NodeState, majority_preliminaries,
                       majority_blocks, majority_timestamps=None) -> np.ndarray:
        """Rotate the node's chain onto the majority chain.

        Requires a shared prefix and the same confirmed transactions beyond
        it.  The reconciliation unitary is built and checked (it must fix
        the prefix and map each local block to its majority counterpart
        within 1e-9), then the chain is rebuilt from the majority's public
        record and re-encrypted under the node's own key.  Returns the
        operator.
        """
        chain = node.chain
        if len(majority_preliminaries) != chain.length:
            raise ChainMismatch(
                f"length mismatch: {len(majority_preliminaries)} vs {chain.length}"
            )
        count = chain.length
        prefix = 0
        while prefix < count and np.array_equal(
            majority_preliminaries[prefix], chain.preliminaries[prefix]
        ):
            prefix += 1
        own_ids = sorted(
            tid for ids in node.view.block_tx_ids[prefix:] for tid in ids
        )
        maj_ids = sorted(
            transaction_id(t)
            for vec in majority_preliminaries[prefix:]
            for t in decode_preliminary_block(vec)
        )
        if own_ids != maj_ids:
            raise TransactionSetMismatch(
                "chains carry different confirmed transactions beyond the prefix"
            )
        k = self.params.block_dim
        r = self.params.r
        local_raw = [chain.raw_block(i) for i in range(1, count + 1)]
        loc_unit = [w / np.linalg.norm(w) for w in local_raw]
        maj_unit = [np.asarray(w) / np.linalg.norm(w) for w in majority_blocks]
        op = build_fork_operator(maj_unit, loc_unit, prefix, k)
        residual = max(
            float(np.linalg.norm(op @ loc_unit[j] - maj_unit[j])) for j in range(count)
        )
        unitarity = float(np.max(np.abs(op.conj().T @ op - np.eye(k))))
        if residual > FORK_TOL or unitarity > FORK_TOL:
            raise ChainMismatch(
                f"reconciliation operator failed checks: map {residual:.2e}, "
                f"unitarity {unitarity:.2e}"
            )
        scaled = max(
            float(np.linalg.norm(op @ local_raw[j] - np.asarray(majority_blocks[j])))
            for j in range(count)
        )
        if scaled > FORK_TOL * r * 10:
            raise ChainMismatch(f"scaled action residual {scaled:.2e} too large")
        timestamps = majority_timestamps or [0] * count
        node.chain = rebuild_chain(self.params, majority_preliminaries, node.key, timestamps)
        self._after_local_append(node)
        return op

    def fork_check(self) -> dict:
        """Find the majority disclosed record and bring every other node to
        it: lagging prefixes are synced forward, same-content reorders are
        reconciled with the fork operator."""
        records: dict[tuple, list[str]] = {}
        for name in self.node_order:
            records.setdefault(self.nodes[name].view.record, []).append(name)

        def rank(record):
            holders = records[record]
            return (len(holders), -self.node_order.index(holders[0]))

        best_record = max(records, key=rank)
        majority_holder = self.nodes[records[best_record][0]]
        result = {"majority": records[best_record][0], "reconciled": [], "synced": [],
                  "unresolved": []}
        maj_chain = majority_holder.chain
        for name in self.node_order:
            node = self.nodes[name]
            if node.view.record == best_record:
                continue
            own = node.view.record
            if len(own) < len(best_record) and own == best_record[: len(own)]:
                self._sync_from_majority(node, maj_chain)
                result["synced"].append(name)
                self.counters["forks_resolved"] += 1
                continue
            try:
                maj_raw = [maj_chain.raw_block(i) for i in range(1, maj_chain.length + 1)]
                self.reconcile_fork(node, [p.copy() for p in maj_chain.preliminaries],
                                    maj_raw, list(maj_chain.timestamps))
                result["reconciled"].append(name)
                self.counters["forks_resolved"] += 1
                self.event(name, "fork_reconciled", {"majority": result["majority"]})
            except (ChainMismatch, TransactionSetMismatch) as exc:
                result["unresolved"].append(name)
                self.event(name, "fork_unresolved", {"reason": str(exc)})
        self.event("net", "fork_check", result)
        return result

    def _sync_from_majority(self, node: NodeState, maj_chain: Chain) -> None:
        appended = 0
        for i in range(node.chain.length + 1, maj_chain.length + 1):
            node.chain.append(maj_chain.preliminaries[i - 1], node.key,
                              timestamp=maj_chain.timestamps[i - 1])
            appended += 1
        self._after_local_append(node)
        self.event(node.id, "chain_synced", {"appended": appended})

    # --- main loop ---

    def deliver_due(self) -> None:
        while self._queue and self._queue[0][0] <= self.clock:
            _, _, name, kind, payload = heapq.heappop(self._queue)
            if kind == "txs":
                self._on_deliver_txs(name, payload)
            elif kind == "block":
                self._on_deliver_block(name, payload)
            elif kind == "sync":
                self._on_deliver_sync(name, payload)
            elif kind == "notice":
                self.event(name, "wrong_tx_notice", payload)

    def propose_step(self) -> Decision | None:
        """Round-robin: the next node with a non-empty log proposes."""
        order = self.node_order
        for offset in range(len(order)):
            idx = (self._proposer_idx + offset) % len(order)
            node = self.nodes[order[idx]]
            if node.log:
                self._proposer_idx = (idx + 1) % len(order)
                return self.run_consensus_round(order[idx])
        return None

    def tick(self, actions=()) -> None:
        """One simulation step: scripted actions, due deliveries, then at
        most one consensus proposal."""
        for action in actions:
            action(self)
        self.deliver_due()
        self.propose_step()
        self.clock += 1

    def run_until_quiescent(self, max_ticks: int = 500) -> bool:
        """Advance until no pending deliveries and no mempool entries
        remain; returns False when max_ticks elapsed first."""
        while self.clock < max_ticks:
            if not self._queue and not any(self.nodes[n].log for n in self.node_order):
                return True
            self.tick()
        return not self._queue and not any(self.nodes[n].log for n in self.node_order)

    # --- end-of-run audit ---

    def audit(self) -> dict:
        """Validate every chain, check network agreement among untampered
        nodes, and check value conservation on the majority view."""
        failures = 0
        details = []
        clean_records = set()
        for name in self.node_order:
            node = self.nodes[name]
            report = node.chain.validate(node.key)
            if node.tampered:
                if report.ok:
                    failures += 1
                    details.append(f"{name}: tampered chain passed validation")
                continue
            if not report.ok:
                failures += 1
                details.append(f"{name}: chain invalid at {report.first_invalid_index}")
            clean_records.add(node.view.record)
        if len(clean_records) > 1:
            failures += 1
            details.append(f"disagreement: {len(clean_records)} distinct records")
        granted = sum(a for _, a in self.settings.genesis_grants)
        clean = [self.nodes[n] for n in self.node_order if not self.nodes[n].tampered]
        if clean:
            supply = clean[0].view.total_supply()
            if supply != granted:
                failures += 1
                details.append(f"supply {supply} != granted {granted}")
        self.counters["invariant_failures"] += failures
        return {"failures": failures, "details": details}
