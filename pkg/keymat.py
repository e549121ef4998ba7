"""
Key material shared by producers, consumers and the Authorization Server:
access secrets S_j, per-response content keys k_j = f(S_j, MessageID, senderID),
authority-signed secret rotations, the trust-anchor/certificate store and the
on-disk key container written by `keygen`.
"""

import logging
import os
import struct
from dataclasses import dataclass, field

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

import coap_core
import objsec
from exceptions import AmbiguousScope, IoError, KeyInvalid, Malformed, NoSecret, UnknownSigner

log = logging.getLogger('keymat')

CONTENT_KEY_LENGTH = 16
MIN_SECRET_LENGTH = 16
MAX_SECRET_LENGTH = 32
ACCESS_SECRET_MARKER = b'\xa5\x01'
KEY_FILE_MAGIC = b'OSCK'
KEY_FILE_VERSION = 1


@dataclass(frozen=True)
class AccessSecret:
    key_id: int
    secret: bytes
    resource_scope: tuple = ()
    epoch: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'resource_scope', tuple(self.resource_scope))
        if not MIN_SECRET_LENGTH <= len(self.secret) <= MAX_SECRET_LENGTH:
            raise ValueError(f"secret must be {MIN_SECRET_LENGTH}..{MAX_SECRET_LENGTH} bytes, got {len(self.secret)}")
        if not 0 <= self.key_id <= 0xFFFF:
            raise ValueError(f"key_id {self.key_id} does not fit 16 bits")
        if self.epoch < 0:
            raise ValueError("epoch must be non-negative")

    def covers(self, path):
        return path in self.resource_scope


@dataclass(frozen=True)
class ContentKey:
    key: bytes
    derived_from: tuple


def derive_content_key(s, message_id, sender_id):
    """HKDF-SHA256 of the access secret with info = MessageID (2 bytes, BE) || sender id."""
    if not sender_id:
        raise ValueError("sender id must not be empty")
    message_id %= coap_core.MESSAGE_ID_MODULUS
    info = struct.pack('>H', message_id) + sender_id.encode('utf-8')
    hkdf = HKDF(algorithm=hashes.SHA256(), length=CONTENT_KEY_LENGTH, salt=None, info=info)
    return ContentKey(hkdf.derive(s.secret), (s.key_id, message_id, sender_id))


# ---------------------------------------------------------------------------
# Access secret bodies and rotation

def encode_access_secret(s):
    out = bytearray(ACCESS_SECRET_MARKER)
    out += struct.pack('>HI', s.key_id, s.epoch)
    out.append(len(s.secret))
    out += s.secret
    out.append(len(s.resource_scope))
    for path in s.resource_scope:
        raw = path.encode('utf-8')
        out.append(len(raw))
        out += raw
    return bytes(out)


def decode_access_secret(body):
    try:
        if not body.startswith(ACCESS_SECRET_MARKER):
            raise Malformed("not an access secret body")
        pos = len(ACCESS_SECRET_MARKER)
        key_id, epoch = struct.unpack_from('>HI', body, pos)
        pos += 6
        length = body[pos]
        secret = body[pos + 1:pos + 1 + length]
        if len(secret) != length:
            raise Malformed("truncated secret")
        pos += 1 + length
        scope = []
        for _ in range(body[pos]):
            pos += 1
            size = body[pos]
            scope.append(body[pos + 1:pos + 1 + size].decode('utf-8'))
            pos += size
        if pos + 1 != len(body):
            raise Malformed("trailing bytes after access secret")
        return AccessSecret(key_id, bytes(secret), tuple(scope), epoch)
    except Malformed:
        raise
    except (IndexError, struct.error, UnicodeDecodeError, ValueError) as e:
        raise Malformed(f"bad access secret body: {e}") from e


def rotate_access_secret(old, new_secret, authority_key, authority_id='authz', resource_scope=None):
    """
    Signed PUT payload installing the next epoch of an access secret.

    Args:
        old: the AccessSecret currently in force
        new_secret: replacement secret bytes (16..32)
        authority_key: private key of the trusted authority
        authority_id: signer id written in the object header
        resource_scope: optional new scope; defaults to the old one

    Returns:
        Signed SecureObject whose body encodes the secret with epoch old.epoch + 1
    """
    scope = old.resource_scope if resource_scope is None else tuple(resource_scope)
    rotated = AccessSecret(old.key_id, bytes(new_secret), scope, old.epoch + 1)
    obj = objsec.sign_object(encode_access_secret(rotated), authority_key, authority_id, key_id=old.key_id)
    log.info(f"Rotation object for key_id {old.key_id}: epoch {old.epoch} -> {rotated.epoch}")
    return obj


def read_rotation(obj):
    if obj.kind != objsec.ObjectKind.SIGNED:
        raise Malformed(f"rotation must be a signed object, got {obj.kind.name}")
    return decode_access_secret(obj.body)


def generate_secret(length=MIN_SECRET_LENGTH):
    return os.urandom(length)


def lookup_secret_for_resource(store, path):
    """The unique secret whose scope contains `path`."""
    matches = [s for s in store if s.covers(path)]
    if not matches:
        raise NoSecret(f"no access secret covers {path}")
    if len({s.key_id for s in matches}) > 1:
        raise AmbiguousScope(f"{path} is covered by key_ids {sorted(s.key_id for s in matches)}")
    return max(matches, key=lambda s: s.epoch)


def check_scope_partition(store):
    """Raise AmbiguousScope unless every path maps to exactly one key_id."""
    owner = {}
    for s in store:
        for path in s.resource_scope:
            if owner.setdefault(path, s.key_id) != s.key_id:
                raise AmbiguousScope(f"{path} scoped by key_ids {owner[path]} and {s.key_id}")


# ---------------------------------------------------------------------------
# Trust store

@dataclass
class TrustStore:
    anchors: list = field(default_factory=list)
    certificates: dict = field(default_factory=dict)

    def add_anchor(self, public_key):
        self.anchors.append(public_key)

    def is_anchor(self, public_key):
        try:
            wanted = objsec.public_key_bytes(public_key)
        except AttributeError:
            return False
        return any(objsec.public_key_bytes(anchor) == wanted for anchor in self.anchors)

    def verified_by_anchor(self, obj):
        return any(objsec.verify_object(obj, anchor) for anchor in self.anchors)

    def add_certificate(self, cert):
        """Store a certificate after checking it against the anchors."""
        payload = objsec.certificate_payload(cert)
        if not self.verified_by_anchor(cert):
            raise UnknownSigner(f"certificate for {payload.subject_id} does not verify under any trust anchor")
        self.certificates[payload.subject_id] = cert
        return payload

    def get(self, subject_id):
        return self.certificates.get(subject_id)


# ---------------------------------------------------------------------------
# Key files

@dataclass(frozen=True)
class KeyPair:
    owner_id: str
    suite_id: int
    private_key: object
    public_key: object


def generate_keypair(suite_id=coap_core.DEFAULT_SUITE):
    suite = coap_core.get_suite(suite_id)
    if suite.signature == 'ed25519':
        return ed25519.Ed25519PrivateKey.generate()
    return ec.generate_private_key(ec.SECP256R1())


def encode_key_container(owner_id, private_key=None, public_key=None):
    if public_key is None:
        if private_key is None:
            raise KeyInvalid("key container needs a key")
        public_key = private_key.public_key()
    suite_id = coap_core.suite_for_key(public_key)
    private_der = b''
    if private_key is not None:
        private_der = private_key.private_bytes(
            serialization.Encoding.DER, serialization.PrivateFormat.PKCS8, serialization.NoEncryption())
    public_der = objsec.public_key_bytes(public_key)
    owner = owner_id.encode('utf-8')
    out = bytearray(KEY_FILE_MAGIC)
    out += bytes([KEY_FILE_VERSION, suite_id, len(owner)]) + owner
    out += struct.pack('>H', len(private_der)) + private_der
    out += struct.pack('>H', len(public_der)) + public_der
    return bytes(out)


def is_key_container(data):
    return data.startswith(KEY_FILE_MAGIC)


def decode_key_container(data):
    try:
        if not is_key_container(data) or data[4] != KEY_FILE_VERSION:
            raise Malformed("not a key container")
        suite_id, owner_length = data[5], data[6]
        pos = 7
        owner = data[pos:pos + owner_length].decode('utf-8')
        pos += owner_length
        private_length = struct.unpack_from('>H', data, pos)[0]
        private_der = data[pos + 2:pos + 2 + private_length]
        pos += 2 + private_length
        public_length = struct.unpack_from('>H', data, pos)[0]
        public_der = data[pos + 2:pos + 2 + public_length]
        if pos + 2 + public_length != len(data):
            raise Malformed("key container length mismatch")
        private_key = serialization.load_der_private_key(private_der, password=None) if private_der else None
        return KeyPair(owner, suite_id, private_key, objsec.load_public_key(public_der))
    except Malformed:
        raise
    except (IndexError, struct.error, UnicodeDecodeError, ValueError, KeyInvalid) as e:
        raise Malformed(f"bad key container: {e}") from e


def _write_file(path, data):
    try:
        with open(path, 'wb') as f:
            f.write(data)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_file(path):
    try:
        with open(path, 'rb') as f:
            return f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e


def save_keypair(path, private_key, owner_id):
    """Write `path` (private container) and `path`.pub (public only)."""
    _write_file(path, encode_key_container(owner_id, private_key=private_key))
    _write_file(f"{path}.pub", encode_key_container(owner_id, public_key=private_key.public_key()))
    log.info(f"Key pair for {owner_id} written to {path} and {path}.pub")
    return path, f"{path}.pub"


def load_keypair(path):
    pair = decode_key_container(read_file(path))
    if pair.private_key is None:
        raise KeyInvalid(f"{path} holds no private key")
    return pair


def load_public_key_file(path):
    return decode_key_container(read_file(path))
