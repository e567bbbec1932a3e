"""Key-pool accounting and authenticated encryption of timing data.

Timing records travel in frames of at most 32 kB, each encrypted and
authenticated with a fresh 128-bit key drawn from a pool of distilled key
bits. The pool enforces one-time use: keys are consumed as disjoint
128-bit segments, and a session halts encryption (KeyExhaustionError)
rather than reuse material.

Wire format, little-endian throughout:
  magic "QSTT" (4) | version 0x01 (1) | frame_id u64 | key_id u64 |
  nonce (12) | payload_len u32 | ciphertext (payload_len) | tag (16)
The 37-byte header doubles as associated data, so header tampering breaks
the tag exactly like payload tampering. The nonce is the frame_id padded
with zeros; uniqueness follows from key freshness (one key, one frame),
not from nonce bookkeeping.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

MAGIC = b"QSTT"
VERSION = 1
MAX_PAYLOAD = 32768
KEY_BITS = 128
_HEADER = struct.Struct("<4sBQQ12sI")
HEADER_SIZE = _HEADER.size  # 37
TAG_SIZE = 16

REJECT_BAD_TAG = "bad-tag"
REJECT_REPLAY = "replay"
REJECT_UNKNOWN_KEY = "unknown-key"


class KeyExhaustionError(RuntimeError):
    """The pool holds fewer than 128 unconsumed bits."""


class FrameFormatError(ValueError):
    """Bytes do not parse as a frame."""


class KeyPool:
    """Append-only store of key bits, consumed as disjoint 128-bit segments.

    Deposits concatenate at the bit level (a deposit need not be a whole
    number of bytes), but segments always start at bit 128*i, which is
    byte-aligned, so extraction is a plain slice. Segment i doubles as the
    key_id carried in frames.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self._bits = 0
        self._consumed_segments = 0

    @classmethod
    def from_seed(cls, seed: int, n_bits: int) -> "KeyPool":
        """Pool preloaded with n_bits of generator output (models keys
        agreed in earlier passes; both sides build the same pool from the
        shared seed)."""
        import numpy as np

        pool = cls()
        n_bytes = (n_bits + 7) // 8
        pool.deposit(np.random.default_rng(seed).bytes(n_bytes), n_bits)
        return pool

    @property
    def available_bits(self) -> int:
        return self._bits

    @property
    def consumed_bits(self) -> int:
        return self._consumed_segments * KEY_BITS

    @property
    def remaining_bits(self) -> int:
        return self._bits - self.consumed_bits

    @property
    def frames_encryptable(self) -> int:
        return self.remaining_bits // KEY_BITS

    def deposit(self, material: bytes, n_bits: int | None = None) -> None:
        """Append key material; n_bits defaults to all of it. Material
        beyond n_bits is discarded, never silently kept."""
        if n_bits is None:
            n_bits = 8 * len(material)
        if n_bits < 0 or n_bits > 8 * len(material):
            raise ValueError("n_bits exceeds the supplied material")
        if n_bits == 0:
            return
        off = self._bits % 8
        whole, rem = divmod(n_bits, 8)
        if off == 0:
            self._buf.extend(material[:whole])
            if rem:
                self._buf.append(material[whole] & ((0xFF << (8 - rem)) & 0xFF))
        else:
            # bit-level splice: fill the partial last byte, shift the rest
            carry = self._buf[-1]
            n_in = whole + (1 if rem else 0)
            self._buf.pop()
            for b in material[:n_in]:
                self._buf.append((carry | (b >> off)) & 0xFF)
                carry = (b << (8 - off)) & 0xFF
            total_bits = self._bits + n_bits
            if (total_bits % 8) != 0 or n_in * 8 > n_bits + off:
                self._buf.append(carry)
            used_bytes = (total_bits + 7) // 8
            del self._buf[used_bytes:]
            if total_bits % 8:
                keep = total_bits % 8
                self._buf[-1] &= (0xFF << (8 - keep)) & 0xFF
        self._bits += n_bits

    def key_bytes(self, key_id: int) -> bytes:
        """16-byte segment for key_id; raises KeyError if the pool does
        not extend that far."""
        if key_id < 0 or (key_id + 1) * KEY_BITS > self._bits:
            raise KeyError(f"key_id {key_id} beyond pool")
        return bytes(self._buf[16 * key_id: 16 * (key_id + 1)])

    def take_key(self) -> tuple[int, bytes]:
        """Consume the next unused segment; (key_id, key bytes)."""
        if self.remaining_bits < KEY_BITS:
            raise KeyExhaustionError(
                f"{self.remaining_bits} bits left; a frame key needs {KEY_BITS}")
        key_id = self._consumed_segments
        self._consumed_segments += 1
        return key_id, self.key_bytes(key_id)


def deposit_keys(pool: KeyPool, material: bytes, n_bits: int | None = None) -> KeyPool:
    """Functional-style wrapper around KeyPool.deposit."""
    pool.deposit(material, n_bits)
    return pool


@dataclass(frozen=True)
class EncryptedFrame:
    frame_id: int
    key_id: int
    nonce: bytes
    ciphertext: bytes
    auth_tag: bytes
    magic: bytes = MAGIC
    version: int = VERSION

    def __post_init__(self) -> None:
        if self.magic != MAGIC or self.version != VERSION:
            raise FrameFormatError("bad magic or version")
        if not 0 <= self.frame_id < 2**64 or not 0 <= self.key_id < 2**64:
            raise FrameFormatError("frame_id and key_id must be u64")
        if len(self.nonce) != 12 or len(self.auth_tag) != TAG_SIZE:
            raise FrameFormatError("bad nonce or tag length")
        if len(self.ciphertext) > MAX_PAYLOAD:
            raise FrameFormatError("payload exceeds 32768 bytes")

    @property
    def payload_len(self) -> int:
        return len(self.ciphertext)

    def header_bytes(self) -> bytes:
        return _HEADER.pack(self.magic, self.version, self.frame_id,
                            self.key_id, self.nonce, self.payload_len)

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.ciphertext + self.auth_tag


def frame_nonce(frame_id: int) -> bytes:
    return frame_id.to_bytes(8, "little") + b"\x00\x00\x00\x00"


def encrypt_frame(pool: KeyPool, plaintext: bytes, frame_id: int) -> EncryptedFrame:
    """Encrypt one payload under a fresh 128-bit key from the pool.

    The header is bound as associated data. Empty payloads are valid and
    still consume a key.
    """
    if len(plaintext) > MAX_PAYLOAD:
        raise ValueError(f"payload {len(plaintext)} exceeds {MAX_PAYLOAD} bytes")
    if not 0 <= frame_id < 2**64:
        raise ValueError("frame_id must be u64")
    key_id, key = pool.take_key()
    nonce = frame_nonce(frame_id)
    header = _HEADER.pack(MAGIC, VERSION, frame_id, key_id, nonce, len(plaintext))
    sealed = AESGCM(key).encrypt(nonce, plaintext, header)
    return EncryptedFrame(
        frame_id=frame_id,
        key_id=key_id,
        nonce=nonce,
        ciphertext=sealed[:-TAG_SIZE],
        auth_tag=sealed[-TAG_SIZE:],
    )


def decode_frame(data: bytes, offset: int = 0) -> tuple[EncryptedFrame, int]:
    """Parse one frame starting at offset; returns (frame, next offset)."""
    if len(data) - offset < HEADER_SIZE:
        raise FrameFormatError("truncated header")
    magic, version, frame_id, key_id, nonce, payload_len = _HEADER.unpack_from(
        data, offset)
    if magic != MAGIC:
        raise FrameFormatError("bad magic")
    if version != VERSION:
        raise FrameFormatError(f"unsupported version {version}")
    if payload_len > MAX_PAYLOAD:
        raise FrameFormatError("payload length exceeds 32768")
    end = offset + HEADER_SIZE + payload_len + TAG_SIZE
    if len(data) < end:
        raise FrameFormatError("truncated frame body")
    body = data[offset + HEADER_SIZE: end - TAG_SIZE]
    tag = data[end - TAG_SIZE: end]
    return EncryptedFrame(frame_id=frame_id, key_id=key_id, nonce=nonce,
                          ciphertext=bytes(body), auth_tag=bytes(tag)), end


@dataclass(frozen=True)
class DecryptResult:
    """Outcome of verifying one frame: plaintext on success, else a
    rejection cause (bad-tag | replay | unknown-key)."""

    plaintext: bytes | None
    rejection: str | None
    frame_id: int | None

    @property
    def ok(self) -> bool:
        return self.rejection is None


def decrypt_verify(pool: KeyPool, frame: EncryptedFrame,
                   last_frame_id: int = -1) -> DecryptResult:
    """Authenticate and decrypt against the shared pool.

    Accepts iff the key_id exists in the receiver's pool, the frame_id
    strictly exceeds last_frame_id, and the tag verifies over header and
    ciphertext.
    """
    if frame.frame_id <= last_frame_id:
        return DecryptResult(None, REJECT_REPLAY, frame.frame_id)
    try:
        key = pool.key_bytes(frame.key_id)
    except KeyError:
        return DecryptResult(None, REJECT_UNKNOWN_KEY, frame.frame_id)
    try:
        plain = AESGCM(key).decrypt(
            frame.nonce, frame.ciphertext + frame.auth_tag, frame.header_bytes())
    except InvalidTag:
        return DecryptResult(None, REJECT_BAD_TAG, frame.frame_id)
    return DecryptResult(plain, None, frame.frame_id)


def decrypt_verify_bytes(pool: KeyPool, data: bytes,
                         last_frame_id: int = -1) -> DecryptResult:
    """decrypt_verify on raw bytes; malformed framing counts as bad-tag
    (an unparseable frame is indistinguishable from a forged one)."""
    try:
        frame, end = decode_frame(data)
        if end != len(data):
            raise FrameFormatError("trailing bytes after frame")
    except FrameFormatError:
        return DecryptResult(None, REJECT_BAD_TAG, None)
    return decrypt_verify(pool, frame, last_frame_id)


class FrameReceiver:
    """Stateful verifier enforcing strictly increasing frame ids."""

    def __init__(self, pool: KeyPool) -> None:
        self.pool = pool
        self.last_frame_id = -1
        self.results: list[DecryptResult] = []

    def receive(self, frame: EncryptedFrame) -> DecryptResult:
        res = decrypt_verify(self.pool, frame, self.last_frame_id)
        if res.ok:
            self.last_frame_id = frame.frame_id
        self.results.append(res)
        return res


def save_frames(path, frames) -> None:
    with open(path, "wb") as fh:
        for frame in frames:
            fh.write(frame.to_bytes())


def load_frames(path) -> list[EncryptedFrame]:
    with open(path, "rb") as fh:
        data = fh.read()
    frames = []
    offset = 0
    while offset < len(data):
        frame, offset = decode_frame(data, offset)
        frames.append(frame)
    return frames
