"""Cryptographic building blocks.

Ed25519 for message signatures, X25519 + HKDF-SHA256 for pairwise keys,
HMAC-SHA256 for per-message IV/nonce derivation, AES-128-CBC (no padding)
to wrap sender keys and AES-128-CTR for payloads.

Key material is passed around as plain ``bytes``; the lengths are checked at
the boundaries of each function.
"""

from __future__ import annotations

import base64
import os
import random
from dataclasses import dataclass
from typing import Callable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, hmac
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import CryptoError, KeyAgreementError

SENDER_KEY_SIZE = 16
MASTER_NONCE_SIZE = 16
PAYLOAD_NONCE_SIZE = 12
HANDLE_SIZE = 8
SIGNATURE_SIZE = 64

PAIRWISE_KEY_INFO = b"strongvelope pairwise key\x01"
SIGNATURE_MAGIC = b"strongvelopesig"
PAYLOAD_NONCE_LABEL = b"payload"

RandomSource = Callable[[int], bytes]


def seeded_random(seed: bytes | int | str) -> RandomSource:
    """Deterministic byte source for tests and scripted scenarios.

    Not suitable for real keys; production code should use ``os.urandom``.
    """
    return random.Random(seed).randbytes


def _require(name: str, value: bytes, size: int) -> bytes:
    if len(value) != size:
        raise CryptoError(f"{name} must be {size} bytes, got {len(value)}")
    return bytes(value)


def _raw_public(key) -> bytes:
    return key.public_bytes(Encoding.Raw, PublicFormat.Raw)


@dataclass(frozen=True)
class SignKeyPair:
    secret_seed: bytes
    public_key: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> SignKeyPair:
        seed = _require("Ed25519 seed", seed, 32)
        priv = Ed25519PrivateKey.from_private_bytes(seed)
        return cls(seed, _raw_public(priv.public_key()))

    @classmethod
    def generate(cls, rng: RandomSource = os.urandom) -> SignKeyPair:
        return cls.from_seed(rng(32))


def clamp_scalar(scalar: bytes) -> bytes:
    b = bytearray(_require("Curve25519 scalar", scalar, 32))
    b[0] &= 248
    b[31] &= 127
    b[31] |= 64
    return bytes(b)


@dataclass(frozen=True)
class DhKeyPair:
    secret_scalar: bytes
    public_point: bytes

    @classmethod
    def from_scalar(cls, scalar: bytes) -> DhKeyPair:
        scalar = clamp_scalar(scalar)
        priv = X25519PrivateKey.from_private_bytes(scalar)
        return cls(scalar, _raw_public(priv.public_key()))

    @classmethod
    def generate(cls, rng: RandomSource = os.urandom) -> DhKeyPair:
        return cls.from_scalar(rng(32))


def handle_from_b64url(text: str) -> bytes:
    """Decode a base64url user handle (padding optional) to its 8 raw bytes."""
    raw = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    return _require("participant handle", raw, HANDLE_SIZE)


def handle_to_b64url(handle: bytes) -> str:
    return base64.urlsafe_b64encode(handle).rstrip(b"=").decode("ascii")


def new_sender_key(rng: RandomSource = os.urandom) -> bytes:
    return _require("sender key", rng(SENDER_KEY_SIZE), SENDER_KEY_SIZE)


def new_master_nonce(rng: RandomSource = os.urandom) -> bytes:
    return _require("master nonce", rng(MASTER_NONCE_SIZE), MASTER_NONCE_SIZE)


def _hmac_sha256(key: bytes, data: bytes) -> bytes:
    mac = hmac.HMAC(key, hashes.SHA256())
    mac.update(data)
    return mac.finalize()


def derive_pairwise_key(own: DhKeyPair, other_public: bytes) -> bytes:
    """Symmetric 16-byte key shared between ``own`` and the holder of ``other_public``."""
    other_public = _require("Curve25519 public key", other_public, 32)
    priv = X25519PrivateKey.from_private_bytes(own.secret_scalar)
    try:
        shared = priv.exchange(X25519PublicKey.from_public_bytes(other_public))
    except ValueError as exc:
        # OpenSSL refuses an all-zero result (low-order point)
        raise KeyAgreementError(f"key agreement failed: {exc}") from exc
    if shared == bytes(32):
        raise KeyAgreementError("key agreement produced an all-zero shared secret")
    okm = HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=PAIRWISE_KEY_INFO).derive(
        shared
    )
    return okm[:SENDER_KEY_SIZE]


def derive_recipient_iv(nonce: bytes, recipient: bytes) -> bytes:
    nonce = _require("master nonce", nonce, MASTER_NONCE_SIZE)
    recipient = _require("participant handle", recipient, HANDLE_SIZE)
    return _hmac_sha256(nonce, recipient)[:16]


def derive_payload_nonce(nonce: bytes) -> bytes:
    nonce = _require("master nonce", nonce, MASTER_NONCE_SIZE)
    return _hmac_sha256(nonce, PAYLOAD_NONCE_LABEL)[:PAYLOAD_NONCE_SIZE]


def _cbc(pairwise: bytes, iv: bytes):
    pairwise = _require("pairwise key", pairwise, 16)
    iv = _require("IV", iv, 16)
    return Cipher(algorithms.AES(pairwise), modes.CBC(iv))


def wrap_sender_keys(keys: bytes, pairwise: bytes, iv: bytes) -> bytes:
    """AES-CBC encrypt one key, or current || previous, without padding."""
    if len(keys) not in (16, 32):
        raise CryptoError(f"sender key block must be 16 or 32 bytes, got {len(keys)}")
    enc = _cbc(pairwise, iv).encryptor()
    return enc.update(keys) + enc.finalize()


def unwrap_sender_keys(
    ciphertext: bytes, pairwise: bytes, iv: bytes
) -> tuple[bytes, bytes | None]:
    """Inverse of :func:`wrap_sender_keys`; returns ``(current, previous_or_None)``."""
    if len(ciphertext) not in (16, 32):
        raise CryptoError(f"wrapped key block must be 16 or 32 bytes, got {len(ciphertext)}")
    dec = _cbc(pairwise, iv).decryptor()
    plain = dec.update(ciphertext) + dec.finalize()
    return plain[:16], (plain[16:] or None)


def encrypt_payload(plaintext: bytes, key: bytes, payload_nonce: bytes) -> bytes:
    key = _require("sender key", key, SENDER_KEY_SIZE)
    payload_nonce = _require("payload nonce", payload_nonce, PAYLOAD_NONCE_SIZE)
    if len(plaintext) > 16 * 2**32:
        raise CryptoError("payload exceeds the 32-bit block counter")
    ctr = Cipher(algorithms.AES(key), modes.CTR(payload_nonce + bytes(4))).encryptor()
    return ctr.update(plaintext) + ctr.finalize()


decrypt_payload = encrypt_payload


def sign_message(body: bytes, keys: SignKeyPair) -> bytes:
    priv = Ed25519PrivateKey.from_private_bytes(keys.secret_seed)
    return priv.sign(SIGNATURE_MAGIC + body)


def verify_message(body: bytes, signature: bytes, signer_public: bytes) -> bool:
    if len(signature) != SIGNATURE_SIZE or len(signer_public) != 32:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(signer_public).verify(
            signature, SIGNATURE_MAGIC + body
        )
    except (InvalidSignature, ValueError):
        return False
    return True
