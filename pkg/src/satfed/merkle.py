"""Append-only Merkle accumulator with membership proofs.

Leaf nodes hash as H(0x00 || leaf), internal nodes as H(0x01 || left || right);
the prefixes block second-preimage attacks between levels. Odd levels are
padded by duplicating the last node, so every proof has ceil(log2(n))
siblings.
"""

from __future__ import annotations

import hashlib
import math

from .crypto import HASH_LEN, Digest
from .errors import FormatError

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

EMPTY_ROOT = Digest(hashlib.sha256(b"").digest())


def _hash_leaf(leaf: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + leaf).digest()


def _hash_nodes(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


class MerkleAccumulator:
    """Ordered leaf set whose root commits to the full append history."""

    def __init__(self, leaves: list[bytes] | None = None):
        self._leaves: list[bytes] = []
        for leaf in leaves or []:
            self.append(leaf)

    @property
    def leaves(self) -> list[bytes]:
        return list(self._leaves)

    def __len__(self) -> int:
        return len(self._leaves)

    def append(self, leaf: bytes) -> Digest:
        if len(leaf) != HASH_LEN:
            raise FormatError("accumulator leaves must be 32 bytes")
        self._leaves.append(leaf)
        return self.root

    def copy(self) -> "MerkleAccumulator":
        acc = MerkleAccumulator()
        acc._leaves = list(self._leaves)
        return acc

    @property
    def root(self) -> Digest:
        if not self._leaves:
            return EMPTY_ROOT
        level = [_hash_leaf(leaf) for leaf in self._leaves]
        while len(level) > 1:
            if len(level) % 2 == 1:
                level.append(level[-1])
            level = [
                _hash_nodes(level[i], level[i + 1]) for i in range(0, len(level), 2)
            ]
        return Digest(level[0])

    def membership_proof(self, index: int) -> list[bytes]:
        """Sibling hashes bottom-up for the leaf at `index`."""
        n = len(self._leaves)
        if index < 0 or index >= n:
            raise IndexError(f"leaf index {index} out of range for {n} leaves")
        path: list[bytes] = []
        level = [_hash_leaf(leaf) for leaf in self._leaves]
        pos = index
        while len(level) > 1:
            if len(level) % 2 == 1:
                level.append(level[-1])
            sibling = pos + 1 if pos % 2 == 0 else pos - 1
            path.append(level[sibling])
            level = [
                _hash_nodes(level[i], level[i + 1]) for i in range(0, len(level), 2)
            ]
            pos //= 2
        return path


def verify_proof(root: Digest, leaf: bytes, index: int, path: list[bytes]) -> bool:
    """True iff the sibling path reconstructs the root for this leaf/index."""
    node = _hash_leaf(leaf)
    pos = index
    for sibling in path:
        if pos % 2 == 0:
            node = _hash_nodes(node, sibling)
        else:
            node = _hash_nodes(sibling, node)
        pos //= 2
    return Digest(node) == root


def expected_proof_length(n_leaves: int) -> int:
    if n_leaves <= 1:
        return 0
    return math.ceil(math.log2(n_leaves))
