"""
Secure content objects: a fixed-order TLV envelope for signed, encrypted and
certificate objects, plus the operations that create, parse and check them.

Wire layout (all integers big-endian):

    version(1) kind(1) suite(1) id_len(1) id(id_len) key_id(2)
    [binding_message_id(2), Encrypted only]
    body_len(2) body(body_len) auth(rest)

A signature covers every byte before `auth`. An Encrypted object carries the
AEAD ciphertext in `body` and the tag in `auth`; its associated data is the
header (everything before `body_len`).
"""

import hashlib
import logging
import struct
from dataclasses import dataclass
from enum import IntEnum

from cryptography.hazmat.primitives import serialization

import coap_core
from exceptions import (
    KeyInvalid,
    Malformed,
    NestingTooDeep,
    OversizeBody,
    ValidityInverted,
)

log = logging.getLogger('objsec')

OBJECT_VERSION = 1
MAX_ID_LENGTH = 32
MAX_BODY_LENGTH = 0xFFFF
MAX_NESTING_DEPTH = 4
ANNOTATION_MARKER = b'\xa5\x02'


class ObjectKind(IntEnum):
    SIGNED = 1
    ENCRYPTED = 2
    CERTIFICATE = 3


@dataclass(frozen=True)
class ObjectHeader:
    version: int = OBJECT_VERSION
    cipher_suite_id: int = coap_core.DEFAULT_SUITE
    signer_or_sender_id: str = ''
    key_id: int = 0
    binding_message_id: int = None


@dataclass(frozen=True)
class SecureObject:
    kind: ObjectKind
    header: ObjectHeader
    body: bytes
    auth: bytes


@dataclass(frozen=True)
class CertificatePayload:
    subject_id: str
    public_key: bytes
    capabilities: tuple = ()
    location: str = None
    not_before: int = 0
    not_after: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'capabilities', tuple(self.capabilities))

    def is_valid_at(self, now):
        return self.not_before <= now < self.not_after


@dataclass(frozen=True)
class Annotation:
    """Gateway-added context around a nested signed object."""
    timestamp: int
    location: str
    inner: SecureObject


# ---------------------------------------------------------------------------
# Encoding

def _id_bytes(identity):
    raw = identity.encode('utf-8')
    if not raw or len(raw) > MAX_ID_LENGTH:
        raise ValueError(f"identity must be 1..{MAX_ID_LENGTH} bytes, got {len(raw)}")
    return raw


def _short_string(value, what):
    raw = value.encode('utf-8')
    if len(raw) > 255:
        raise ValueError(f"{what} longer than 255 bytes")
    return bytes([len(raw)]) + raw


def encode_header(kind, header):
    """Header bytes up to (excluding) the body length field; AEAD associated data."""
    if header.version != OBJECT_VERSION:
        raise ValueError(f"unsupported object version {header.version}")
    coap_core.get_suite(header.cipher_suite_id)
    raw_id = _id_bytes(header.signer_or_sender_id)

    out = bytearray([header.version, int(kind), header.cipher_suite_id, len(raw_id)])
    out += raw_id
    out += struct.pack('>H', header.key_id)
    if kind == ObjectKind.ENCRYPTED:
        if header.binding_message_id is None:
            raise ValueError("encrypted objects need a binding MessageID")
        out += struct.pack('>H', header.binding_message_id)
    elif header.binding_message_id is not None:
        raise ValueError("only encrypted objects carry a binding MessageID")
    return bytes(out)


def _covered_bytes(kind, header, body):
    if len(body) > MAX_BODY_LENGTH:
        raise OversizeBody(f"body of {len(body)} bytes exceeds {MAX_BODY_LENGTH}")
    return encode_header(kind, header) + struct.pack('>H', len(body)) + body


def encode_object(obj):
    """Canonical bytes of a secure object."""
    if not obj.auth:
        raise ValueError("object has no signature or tag")
    return _covered_bytes(obj.kind, obj.header, obj.body) + obj.auth


def decode_object(data, depth=1):
    """
    Parse one secure object.

    Args:
        data: encoded object bytes
        depth: nesting level of this object (1 for an outermost object); callers
            decoding a nested body pass their own depth + 1

    Returns:
        SecureObject whose encoding equals `data`
    """
    if depth > MAX_NESTING_DEPTH:
        raise NestingTooDeep(f"nesting depth {depth} exceeds {MAX_NESTING_DEPTH}")
    data = bytes(data)
    if len(data) < 4:
        raise Malformed(f"object needs at least 4 bytes, got {len(data)}")

    version, kind_byte, suite_id, id_length = data[0], data[1], data[2], data[3]
    if version != OBJECT_VERSION:
        raise Malformed(f"unknown object version {version}")
    try:
        kind = ObjectKind(kind_byte)
    except ValueError:
        raise Malformed(f"unknown object kind {kind_byte}") from None
    coap_core.get_suite(suite_id)
    if not 0 < id_length <= MAX_ID_LENGTH:
        raise Malformed(f"identity length {id_length} out of range")

    pos = 4
    fixed = id_length + 2 + (2 if kind == ObjectKind.ENCRYPTED else 0) + 2
    if pos + fixed > len(data):
        raise Malformed("truncated header")
    try:
        identity = data[pos:pos + id_length].decode('utf-8')
    except UnicodeDecodeError:
        raise Malformed("identity is not UTF-8") from None
    pos += id_length
    key_id = struct.unpack_from('>H', data, pos)[0]
    pos += 2
    binding = None
    if kind == ObjectKind.ENCRYPTED:
        binding = struct.unpack_from('>H', data, pos)[0]
        pos += 2
    body_length = struct.unpack_from('>H', data, pos)[0]
    pos += 2
    if pos + body_length > len(data):
        raise Malformed("truncated body")
    body = data[pos:pos + body_length]
    auth = data[pos + body_length:]
    if not auth:
        raise Malformed("missing signature or tag")

    if kind == ObjectKind.CERTIFICATE:
        decode_certificate_payload(body)

    header = ObjectHeader(version, suite_id, identity, key_id, binding)
    return SecureObject(kind, header, body, auth)


# ---------------------------------------------------------------------------
# Signing

def sign_object(payload, signing_key, signer_id, key_id=0, suite_id=None, kind=ObjectKind.SIGNED):
    """Sign `payload`; the signature covers header and body so the signer id cannot be swapped."""
    if not signer_id:
        raise ValueError("signer id must not be empty")
    if signing_key is None:
        raise KeyInvalid("no signing key")
    suite = coap_core.get_suite(suite_id if suite_id is not None else coap_core.suite_for_key(signing_key))
    header = ObjectHeader(OBJECT_VERSION, suite.suite_id, signer_id, key_id)
    covered = _covered_bytes(kind, header, bytes(payload))
    try:
        signature = suite.sign(signing_key, covered)
    except KeyInvalid:
        raise
    except Exception as e:
        raise KeyInvalid(f"signing failed: {e}") from e
    return SecureObject(kind, header, bytes(payload), signature)


def verify_object(obj, public_key):
    """True iff obj.auth is a valid signature by public_key over header and body."""
    if obj.kind not in (ObjectKind.SIGNED, ObjectKind.CERTIFICATE):
        return False
    try:
        suite = coap_core.get_suite(obj.header.cipher_suite_id)
        covered = _covered_bytes(obj.kind, obj.header, obj.body)
        return suite.verify(public_key, obj.auth, covered)
    except Exception as e:
        log.debug(f"Verification of object from {obj.header.signer_or_sender_id} failed: {e}")
        return False


# ---------------------------------------------------------------------------
# Encryption

def make_nonce(header, length=13):
    """Nonce from key_id, sender id and binding MessageID; unique per derived key."""
    raw_id = header.signer_or_sender_id.encode('utf-8')
    material = struct.pack('>H', header.key_id) + bytes([len(raw_id)]) + raw_id
    material += struct.pack('>H', header.binding_message_id)
    return hashlib.sha256(material).digest()[:length]


def _key_bytes(content_key):
    return getattr(content_key, 'key', content_key)


def encrypt_object(plaintext, content_key, header):
    if header.binding_message_id is None:
        raise ValueError("encrypted objects need a binding MessageID")
    suite = coap_core.get_suite(header.cipher_suite_id)
    associated = encode_header(ObjectKind.ENCRYPTED, header)
    sealed = suite.seal(_key_bytes(content_key), make_nonce(header, suite.nonce_length), bytes(plaintext), associated)
    body, tag = sealed[:-suite.tag_length], sealed[-suite.tag_length:]
    if len(body) > MAX_BODY_LENGTH:
        raise OversizeBody(f"ciphertext of {len(body)} bytes exceeds {MAX_BODY_LENGTH}")
    return SecureObject(ObjectKind.ENCRYPTED, header, body, tag)


def decrypt_object(obj, content_key):
    """Plaintext of an Encrypted object; AuthFailure on wrong key, tampering or replay."""
    if obj.kind != ObjectKind.ENCRYPTED:
        raise ValueError(f"cannot decrypt a {obj.kind.name} object")
    suite = coap_core.get_suite(obj.header.cipher_suite_id)
    associated = encode_header(ObjectKind.ENCRYPTED, obj.header)
    nonce = make_nonce(obj.header, suite.nonce_length)
    return suite.open(_key_bytes(content_key), nonce, obj.body + obj.auth, associated)


# ---------------------------------------------------------------------------
# Certificates

def public_key_bytes(public_key):
    return public_key.public_bytes(serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)


def load_public_key(der):
    try:
        return serialization.load_der_public_key(der)
    except (ValueError, TypeError) as e:
        raise KeyInvalid(f"unusable public key: {e}") from e


def encode_certificate_payload(payload):
    if payload.not_before >= payload.not_after:
        raise ValidityInverted(f"not_before {payload.not_before} is not before not_after {payload.not_after}")
    out = bytearray(_short_string(payload.subject_id, 'subject'))
    out += struct.pack('>H', len(payload.public_key)) + payload.public_key
    out.append(len(payload.capabilities))
    for capability in payload.capabilities:
        out += _short_string(capability, 'capability')
    if payload.location is None:
        out.append(0)
    else:
        out.append(1)
        out += _short_string(payload.location, 'location')
    out += struct.pack('>qq', payload.not_before, payload.not_after)
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, count):
        if self.pos + count > len(self.data):
            raise Malformed("truncated payload")
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def byte(self):
        return self.take(1)[0]

    def short_string(self):
        try:
            return self.take(self.byte()).decode('utf-8')
        except UnicodeDecodeError:
            raise Malformed("string is not UTF-8") from None

    def done(self):
        if self.pos != len(self.data):
            raise Malformed(f"{len(self.data) - self.pos} trailing bytes")


def decode_certificate_payload(body):
    reader = _Reader(body)
    subject = reader.short_string()
    public_key = reader.take(struct.unpack('>H', reader.take(2))[0])
    capabilities = tuple(reader.short_string() for _ in range(reader.byte()))
    flag = reader.byte()
    if flag not in (0, 1):
        raise Malformed(f"bad location flag {flag}")
    location = reader.short_string() if flag else None
    not_before, not_after = struct.unpack('>qq', reader.take(16))
    reader.done()
    if not subject or not_before >= not_after:
        raise Malformed("certificate subject empty or validity inverted")
    return CertificatePayload(subject, public_key, capabilities, location, not_before, not_after)


def issue_certificate(payload, anchor_key, issuer_id='trust-anchor', key_id=0):
    """A Certificate-kind signed object over the encoded payload, signed by a trust anchor."""
    body = encode_certificate_payload(payload)
    cert = sign_object(body, anchor_key, issuer_id, key_id=key_id, kind=ObjectKind.CERTIFICATE)
    log.info(f"Issued certificate for {payload.subject_id} by {issuer_id}")
    return cert


def certificate_payload(cert):
    if cert.kind != ObjectKind.CERTIFICATE:
        raise ValueError(f"{cert.kind.name} object is not a certificate")
    return decode_certificate_payload(cert.body)


# ---------------------------------------------------------------------------
# Gateway annotations

def annotate_object(inner, gateway_key, gateway_id, timestamp=None, location=None):
    """Wrap a signed object with a gateway-signed timestamp and/or location."""
    if inner.kind not in (ObjectKind.SIGNED, ObjectKind.CERTIFICATE):
        raise ValueError("only signed objects can be annotated")
    body = bytearray(ANNOTATION_MARKER)
    if timestamp is None:
        body.append(0)
    else:
        body.append(1)
        body += struct.pack('>q', timestamp)
    if location is None:
        body.append(0)
    else:
        body.append(1)
        body += _short_string(location, 'location')
    body += encode_object(inner)
    return sign_object(bytes(body), gateway_key, gateway_id)


def read_annotation(obj, depth=1):
    """Unwrap an annotated object; Malformed if the body is not an annotation."""
    if obj.kind != ObjectKind.SIGNED or not obj.body.startswith(ANNOTATION_MARKER):
        raise Malformed("not an annotated object")
    reader = _Reader(obj.body)
    reader.take(len(ANNOTATION_MARKER))
    timestamp = struct.unpack('>q', reader.take(8))[0] if reader.byte() else None
    location = reader.short_string() if reader.byte() else None
    inner = decode_object(obj.body[reader.pos:], depth=depth + 1)
    return Annotation(timestamp, location, inner)
