"""Signatures and hashing backing every protocol message and epoch digest.

Two interchangeable providers sit behind one sign/verify contract:

* ``hmac``: an HMAC-SHA256 scheme keyed from an integer seed. Fully
  deterministic and fast, the default for simulation. Verification material
  is held in a registry the same way public keys would be; protocol code
  cannot forge another identity because it only ever holds its own KeyPair.
* ``ed25519``: a real asymmetric scheme (via the ``cryptography`` package),
  also deterministic for a fixed seed.

Messages are signed by their SHA-256 digest rather than their full bytes,
so signature cost is independent of payload size.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
from dataclasses import dataclass

from fairchain import wire

DIGEST_LEN = 32

SCHEME_HMAC = "hmac"
SCHEME_ED25519 = "ed25519"


@dataclass(frozen=True)
class PublicKey:
    public_id: str
    scheme: str
    material: bytes


@dataclass(frozen=True)
class KeyPair:
    public_id: str
    scheme: str
    secret: bytes
    material: bytes  # verification material, distributed via the registry

    def public(self) -> PublicKey:
        return PublicKey(self.public_id, self.scheme, self.material)


def hash_bytes(msg: bytes) -> bytes:
    """Deterministic fixed-length digest of a canonical byte string."""
    return hashlib.sha256(msg).digest()


def keygen(seed: int, scheme: str = SCHEME_HMAC) -> KeyPair:
    """Derive a key pair from an integer seed. Same seed, same pair."""
    raw = hashlib.sha256(b"fairchain-key/" + scheme.encode() + wire.u64(seed)).digest()
    if scheme == SCHEME_HMAC:
        # Symmetric stand-in: the registry holds the MAC key as the
        # "public" material, mirroring how public keys are known to all.
        public_id = hashlib.sha256(b"fairchain-id/" + raw).hexdigest()[:16]
        return KeyPair(public_id, scheme, raw, raw)
    if scheme == SCHEME_ED25519:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
        from cryptography.hazmat.primitives.serialization import (
            Encoding,
            PublicFormat,
        )

        priv = Ed25519PrivateKey.from_private_bytes(raw)
        pub = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        public_id = hashlib.sha256(pub).hexdigest()[:16]
        return KeyPair(public_id, scheme, raw, pub)
    raise ValueError("unknown signature scheme %r" % scheme)


def sign(key: KeyPair, msg: bytes) -> bytes:
    """Sign the digest of ``msg`` with the pair's secret."""
    digest = hash_bytes(msg)
    if key.scheme == SCHEME_HMAC:
        return hmac_mod.new(key.secret, digest, hashlib.sha256).digest()
    if key.scheme == SCHEME_ED25519:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(key.secret).sign(digest)
    raise ValueError("unknown signature scheme %r" % key.scheme)


def verify(pub: PublicKey, msg: bytes, sig: bytes) -> bool:
    """True iff ``sig`` was produced over exactly ``msg`` by ``pub``'s key."""
    digest = hash_bytes(msg)
    if pub.scheme == SCHEME_HMAC:
        expect = hmac_mod.new(pub.material, digest, hashlib.sha256).digest()
        return hmac_mod.compare_digest(expect, sig)
    if pub.scheme == SCHEME_ED25519:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(pub.material).verify(sig, digest)
            return True
        except InvalidSignature:
            return False
    raise ValueError("unknown signature scheme %r" % pub.scheme)


class KeyRegistry:
    """All participants' verification material, indexed by node id.

    Node id 0 is reserved for the master; players are 1..n.
    """

    def __init__(self) -> None:
        self._keys: dict[int, PublicKey] = {}

    def register(self, node_id: int, pub: PublicKey) -> None:
        if node_id in self._keys:
            raise ValueError("node %d already registered" % node_id)
        self._keys[node_id] = pub

    def public(self, node_id: int) -> PublicKey:
        return self._keys[node_id]

    def knows(self, node_id: int) -> bool:
        return node_id in self._keys

    def verify(self, node_id: int, msg: bytes, sig: bytes) -> bool:
        pub = self._keys.get(node_id)
        return pub is not None and verify(pub, msg, sig)


def keyring_for(scenario_seed: int, node_ids: list[int], scheme: str) -> tuple[dict[int, KeyPair], KeyRegistry]:
    """Per-node key pairs plus the shared registry for one simulation."""
    pairs: dict[int, KeyPair] = {}
    registry = KeyRegistry()
    for node_id in node_ids:
        pair = keygen(scenario_seed * 1_000_003 + node_id, scheme)
        pairs[node_id] = pair
        registry.register(node_id, pair.public())
    return pairs, registry
