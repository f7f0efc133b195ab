"""Merkle trees over txids, inclusion proofs, block headers and SPV checks.

Tree rule: interior node = sha256d(left || right); an odd node at any level is
paired with itself; a single leaf is its own root. There is no leaf/interior
domain separation, so the duplicate-last-leaf malleability of that rule is
inherited deliberately.

Golden-vector line format (whitespace separated, ``#`` starts a comment)::

    <leaf_hex>,<leaf_hex>,...  <index>  <root_hex>  <proof>

where ``<proof>`` is ``-`` for an empty path or comma-joined ``L:<hex>`` /
``R:<hex>`` entries giving the sibling's side, bottom level first.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .hashing import HASH_SIZE, ZERO_HASH, Reader, sha256d, u64, u256

LEFT = "left"
RIGHT = "right"

HEADER_SIZE = 120
MAX_TARGET = 2**256 - 1


class EmptyLeafSet(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


def combine(left: bytes, right: bytes) -> bytes:
    return sha256d(left + right)


def _levels(txids: Sequence[bytes]) -> list[list[bytes]]:
    if not txids:
        raise EmptyLeafSet("merkle tree needs at least one leaf")
    level = list(txids)
    levels = [level]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        level = [combine(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(level)
    return levels


def merkle_root(txids: Sequence[bytes]) -> bytes:
    return _levels(txids)[-1][0]


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    path: tuple[tuple[bytes, str], ...] = ()

    def encode(self) -> str:
        if not self.path:
            return "-"
        return ",".join(f"{'L' if side == LEFT else 'R'}:{h.hex()}" for h, side in self.path)

    @classmethod
    def decode(cls, leaf_index: int, text: str) -> "MerkleProof":
        if text == "-":
            return cls(leaf_index, ())
        path = []
        for item in text.split(","):
            tag, _, hexdigest = item.partition(":")
            if tag not in ("L", "R"):
                raise ValueError(f"bad proof element {item!r}")
            path.append((bytes.fromhex(hexdigest), LEFT if tag == "L" else RIGHT))
        return cls(leaf_index, tuple(path))


def merkle_prove(txids: Sequence[bytes], index: int) -> MerkleProof:
    if not 0 <= index < len(txids):
        raise IndexOutOfRange(f"leaf index {index} outside [0, {len(txids)})")
    path = []
    pos = index
    for level in _levels(txids)[:-1]:
        if pos % 2:
            path.append((level[pos - 1], LEFT))
        else:
            sibling = level[pos + 1] if pos + 1 < len(level) else level[pos]
            path.append((sibling, RIGHT))
        pos //= 2
    return MerkleProof(index, tuple(path))


def fold_proof(txid: bytes, proof: MerkleProof) -> bytes | None:
    """Root implied by ``proof`` for ``txid``, or None if the proof is malformed."""
    if len(txid) != HASH_SIZE or proof.leaf_index < 0:
        return None
    if proof.leaf_index >> len(proof.path):
        return None
    node = txid
    for depth, (sibling, side) in enumerate(proof.path):
        if len(sibling) != HASH_SIZE:
            return None
        bit = (proof.leaf_index >> depth) & 1
        if side == LEFT and bit == 1:
            node = combine(sibling, node)
        elif side == RIGHT and bit == 0:
            node = combine(node, sibling)
        else:
            return None
    return node


@dataclass(frozen=True)
class BlockHeader:
    """Block header; serialized as 120 little-endian bytes in field order."""

    prev_hash: bytes = ZERO_HASH
    merkle_root: bytes = ZERO_HASH
    height: int = 0
    timestamp: int = 0
    difficulty_target: int = MAX_TARGET
    nonce: int = 0

    def serialize(self) -> bytes:
        return (
            self.prev_hash
            + self.merkle_root
            + u64(self.height)
            + u64(self.timestamp)
            + u256(self.difficulty_target)
            + u64(self.nonce)
        )

    @classmethod
    def read(cls, r: Reader) -> "BlockHeader":
        return cls(r.take(32), r.take(32), r.u64(), r.u64(), r.u256(), r.u64())

    @classmethod
    def deserialize(cls, data: bytes) -> "BlockHeader":
        r = Reader(data)
        header = cls.read(r)
        if not r.at_end():
            raise ValueError("trailing bytes after header")
        return header

    @property
    def hash(self) -> bytes:
        return sha256d(self.serialize())

    def hash_value(self) -> int:
        """Header hash read as a big-endian integer, compared against the target."""
        return int.from_bytes(self.hash, "big")

    def meets_target(self) -> bool:
        return self.hash_value() <= self.difficulty_target


def spv_verify(txid: bytes, header: BlockHeader, proof: MerkleProof) -> bool:
    """Accept iff ``txid`` folded up ``proof`` reproduces ``header.merkle_root``."""
    return fold_proof(txid, proof) == header.merkle_root


# -- golden vectors ------------------------------------------------------------


@dataclass(frozen=True)
class GoldenVector:
    leaves: tuple[bytes, ...]
    index: int
    root: bytes
    proof: MerkleProof

    def to_line(self) -> str:
        leaves = ",".join(leaf.hex() for leaf in self.leaves)
        return f"{leaves} {self.index} {self.root.hex()} {self.proof.encode()}"

    @classmethod
    def from_line(cls, line: str) -> "GoldenVector":
        fields = line.split()
        if len(fields) != 4:
            raise ValueError(f"expected 4 fields, got {len(fields)}")
        leaves = tuple(bytes.fromhex(x) for x in fields[0].split(","))
        index = int(fields[1])
        return cls(leaves, index, bytes.fromhex(fields[2]), MerkleProof.decode(index, fields[3]))


def generate_vectors(seed: int = 0, max_leaves: int = 16) -> list[GoldenVector]:
    rng = random.Random(seed)
    vectors = []
    for n in range(1, max_leaves + 1):
        leaves = tuple(rng.randbytes(32) for _ in range(n))
        root = merkle_root(leaves)
        for i in range(n):
            vectors.append(GoldenVector(leaves, i, root, merkle_prove(leaves, i)))
    return vectors


def format_vectors(vectors: Iterable[GoldenVector]) -> str:
    lines = ["# merkle golden vectors: leaves index root proof"]
    lines.extend(v.to_line() for v in vectors)
    return "\n".join(lines) + "\n"


def parse_vectors(text: str) -> list[GoldenVector]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            out.append(GoldenVector.from_line(line))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return out


def check_vectors(vectors: Iterable[GoldenVector]) -> list[int]:
    """Indices (0-based, in input order) of vectors that disagree with this build."""
    bad = []
    for k, v in enumerate(vectors):
        try:
            ok = (
                merkle_root(v.leaves) == v.root
                and merkle_prove(v.leaves, v.index) == v.proof
                and spv_verify(v.leaves[v.index], BlockHeader(merkle_root=v.root), v.proof)
            )
        except (EmptyLeafSet, IndexOutOfRange):
            ok = False
        if not ok:
            bad.append(k)
    return bad
