"""Canonical byte encoding used for signing, hashing, and digests.

Every structure that gets signed or hashed is flattened to bytes with a
fixed field order and explicit length prefixes, so equal values serialize
identically on every node. This is deliberately minimal: big-endian fixed
width integers, length-prefixed blobs, counted sequences. It is not a
general purpose serialization format.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable


def u64(value: int) -> bytes:
    if value < 0:
        raise ValueError("u64 cannot encode negative value %d" % value)
    return value.to_bytes(8, "big")


def i64(value: int) -> bytes:
    return value.to_bytes(8, "big", signed=True)


def blob(data: bytes) -> bytes:
    return len(data).to_bytes(4, "big") + data


def text(value: str) -> bytes:
    return blob(value.encode("utf-8"))


def boolean(value: bool) -> bytes:
    return b"\x01" if value else b"\x00"


def rational(value: Fraction) -> bytes:
    return i64(value.numerator) + u64(value.denominator)


def seq(items: Iterable[bytes]) -> bytes:
    parts = list(items)
    return u64(len(parts)) + b"".join(parts)
