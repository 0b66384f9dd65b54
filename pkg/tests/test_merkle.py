import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satfed.crypto import hash_bytes
from satfed.merkle import (
    EMPTY_ROOT,
    MerkleAccumulator,
    expected_proof_length,
    verify_proof,
)


def _leaf(i: int) -> bytes:
    return hash_bytes(f"leaf-{i}".encode()).bytes32


def _oracle_root(leaves: list[bytes]) -> bytes:
    # Independent full rebuild: same padding rule, coded from scratch.
    if not leaves:
        return hashlib.sha256(b"").digest()
    level = [hashlib.sha256(b"\x00" + l).digest() for l in leaves]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        level = [
            hashlib.sha256(b"\x01" + level[i] + level[i + 1]).digest()
            for i in range(0, len(level), 2)
        ]
    return level[0]


def test_empty_and_single_leaf_roots():
    acc = MerkleAccumulator()
    assert acc.root == EMPTY_ROOT
    leaf = _leaf(0)
    acc.append(leaf)
    assert acc.root.bytes32 == hashlib.sha256(b"\x00" + leaf).digest()


def test_two_leaf_recurrence():
    l1, l2 = _leaf(1), _leaf(2)
    acc = MerkleAccumulator([l1, l2])
    h1 = hashlib.sha256(b"\x00" + l1).digest()
    h2 = hashlib.sha256(b"\x00" + l2).digest()
    assert acc.root.bytes32 == hashlib.sha256(b"\x01" + h1 + h2).digest()


def test_root_matches_rebuild_oracle():
    leaves = [_leaf(i) for i in range(3)]
    acc = MerkleAccumulator()
    for leaf in leaves:
        acc.append(leaf)
    assert acc.root.bytes32 == _oracle_root(leaves)


@given(st.integers(min_value=1, max_value=40))
@settings(max_examples=30, deadline=None)
def test_root_matches_oracle_for_any_size(n):
    leaves = [_leaf(i) for i in range(n)]
    assert MerkleAccumulator(leaves).root.bytes32 == _oracle_root(leaves)


def test_order_dependence():
    a, b = _leaf(1), _leaf(2)
    assert MerkleAccumulator([a, b]).root != MerkleAccumulator([b, a]).root


def test_append_does_not_mutate_prior_leaves():
    acc = MerkleAccumulator([_leaf(0), _leaf(1)])
    before = acc.leaves
    acc.append(_leaf(2))
    assert acc.leaves[:2] == before


def test_proofs_exhaustive_small_trees():
    for n in range(1, 17):
        leaves = [_leaf(i) for i in range(n)]
        acc = MerkleAccumulator(leaves)
        root = acc.root
        for i in range(n):
            path = acc.membership_proof(i)
            assert len(path) == expected_proof_length(n)
            assert verify_proof(root, leaves[i], i, path)


def test_proof_length_n8_is_3():
    acc = MerkleAccumulator([_leaf(i) for i in range(8)])
    assert all(len(acc.membership_proof(i)) == 3 for i in range(8))


def test_tampered_sibling_fails():
    leaves = [_leaf(i) for i in range(5)]
    acc = MerkleAccumulator(leaves)
    root = acc.root
    for i in range(5):
        path = acc.membership_proof(i)
        for level in range(len(path)):
            bad = list(path)
            bad[level] = bytes(32)
            if bad[level] == path[level]:
                continue
            assert not verify_proof(root, leaves[i], i, bad)


def test_wrong_leaf_or_index_fails():
    leaves = [_leaf(i) for i in range(6)]
    acc = MerkleAccumulator(leaves)
    root = acc.root
    path = acc.membership_proof(2)
    assert not verify_proof(root, _leaf(99), 2, path)
    assert not verify_proof(root, leaves[2], 3, path)


def test_out_of_range_index():
    acc = MerkleAccumulator([_leaf(0)])
    with pytest.raises(IndexError):
        acc.membership_proof(1)
