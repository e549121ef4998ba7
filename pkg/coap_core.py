"""
Minimal CoAP (RFC 7252) message codec for the subset OSCAR needs, the
registered cipher-suite table, the Accept-cipher negotiation option and
per-peer MessageID duplicate detection.
"""

import logging
import struct
from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace
from enum import IntEnum

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, ed25519
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers.aead import AESCCM

from exceptions import AuthFailure, KeyInvalid, Malformed, TokenTooLong, TooManySuites

log = logging.getLogger('coap_core')

COAP_VERSION = 1
PAYLOAD_MARKER = 0xFF
MAX_TOKEN_LENGTH = 8
MESSAGE_ID_MODULUS = 1 << 16

# Option numbers
OBSERVE = 6
URI_PATH = 11
CONTENT_FORMAT = 12
URI_QUERY = 15
ACCEPT = 17
ACCEPT_CIPHER = 65001
KNOWN_OPTIONS = frozenset({OBSERVE, URI_PATH, CONTENT_FORMAT, URI_QUERY, ACCEPT, ACCEPT_CIPHER})

MAX_ACCEPT_CIPHER_SUITES = 8

# RFC 7252 EXCHANGE_LIFETIME
DEFAULT_DUPLICATE_SPAN = 247.0
DEFAULT_DUPLICATE_RING = 32


class MessageType(IntEnum):
    CON = 0
    NON = 1
    ACK = 2
    RST = 3


class Code(IntEnum):
    EMPTY = 0x00
    GET = 0x01
    POST = 0x02
    PUT = 0x03
    DELETE = 0x04
    CHANGED = 0x44
    CONTENT = 0x45
    BAD_REQUEST = 0x80
    UNAUTHORIZED = 0x81
    BAD_OPTION = 0x82
    NOT_FOUND = 0x84
    NOT_ACCEPTABLE = 0x86
    INTERNAL_SERVER_ERROR = 0xA0

    @property
    def dotted(self):
        """Human form, e.g. '2.05'."""
        return f"{self.value >> 5}.{self.value & 0x1F:02d}"

    @property
    def is_request(self):
        return 0 < self.value < 0x20


@dataclass(frozen=True)
class CoapMessage:
    type: MessageType
    code: Code
    message_id: int
    token: bytes = b''
    options: tuple = ()
    payload: bytes = b''

    def __post_init__(self):
        # MessageID lives in 16 bits; larger values wrap
        object.__setattr__(self, 'message_id', self.message_id % MESSAGE_ID_MODULUS)
        object.__setattr__(self, 'options', tuple((int(n), bytes(v)) for n, v in self.options))

    def canonical(self):
        """Same message with options in ascending number order (stable for repeats)."""
        return replace(self, options=tuple(sorted(self.options, key=lambda opt: opt[0])))

    def option_values(self, number):
        return [value for num, value in self.options if num == number]

    @property
    def path(self):
        return '/' + '/'.join(v.decode('utf-8', 'replace') for v in self.option_values(URI_PATH))

    def unknown_critical_options(self):
        """Critical (odd-numbered) options this codec does not understand; the caller answers 4.02."""
        return sorted({num for num, _ in self.options if num & 1 and num not in KNOWN_OPTIONS})


def uri_path_options(path):
    return [(URI_PATH, segment.encode('utf-8')) for segment in path.strip('/').split('/') if segment]


# Observe: 0 registers, 1 deregisters; notifications carry a 24-bit sequence number
OBSERVE_REGISTER = 0
OBSERVE_DEREGISTER = 1
OBSERVE_MODULUS = 1 << 24


def make_observe_option(value):
    value %= OBSERVE_MODULUS
    return OBSERVE, value.to_bytes((value.bit_length() + 7) // 8, 'big')


def parse_observe(msg):
    """Observe value of `msg`, or None when the option is absent."""
    values = msg.option_values(OBSERVE)
    if not values:
        return None
    if len(values[0]) > 3:
        raise Malformed(f"Observe value of {len(values[0])} bytes")
    return int.from_bytes(values[0], 'big')


def _option_nibble(value):
    if value < 13:
        return value, b''
    if value < 269:
        return 13, bytes([value - 13])
    if value < 65805:
        return 14, struct.pack('>H', value - 269)
    raise Malformed(f"option delta/length {value} too large")


def encode_coap(msg):
    """Serialize a CoapMessage to RFC 7252 wire form (options are sorted first)."""
    if len(msg.token) > MAX_TOKEN_LENGTH:
        raise TokenTooLong(f"token of {len(msg.token)} bytes exceeds {MAX_TOKEN_LENGTH}")

    out = bytearray()
    out.append((COAP_VERSION << 6) | (int(msg.type) << 4) | len(msg.token))
    out.append(int(msg.code))
    out += struct.pack('>H', msg.message_id)
    out += msg.token

    previous = 0
    for number, value in msg.canonical().options:
        delta_nibble, delta_ext = _option_nibble(number - previous)
        length_nibble, length_ext = _option_nibble(len(value))
        out.append((delta_nibble << 4) | length_nibble)
        out += delta_ext + length_ext + value
        previous = number

    if msg.payload:
        out.append(PAYLOAD_MARKER)
        out += msg.payload
    return bytes(out)


def _read_extended(data, pos, nibble, what):
    if nibble < 13:
        return nibble, pos
    if nibble == 13:
        if pos + 1 > len(data):
            raise Malformed(f"truncated extended option {what}")
        return data[pos] + 13, pos + 1
    if nibble == 14:
        if pos + 2 > len(data):
            raise Malformed(f"truncated extended option {what}")
        return struct.unpack_from('>H', data, pos)[0] + 269, pos + 2
    raise Malformed(f"reserved option {what} nibble 15")


def decode_coap(data):
    """Parse wire bytes into a CoapMessage; Malformed on any framing error."""
    data = bytes(data)
    if len(data) < 4:
        raise Malformed(f"CoAP header needs 4 bytes, got {len(data)}")

    version = data[0] >> 6
    if version != COAP_VERSION:
        raise Malformed(f"unsupported CoAP version {version}")
    msg_type = MessageType((data[0] >> 4) & 0x03)
    token_length = data[0] & 0x0F
    if token_length > MAX_TOKEN_LENGTH:
        raise Malformed(f"reserved token length {token_length}")
    try:
        code = Code(data[1])
    except ValueError:
        raise Malformed(f"unsupported code 0x{data[1]:02x}") from None
    message_id = struct.unpack_from('>H', data, 2)[0]

    pos = 4
    if pos + token_length > len(data):
        raise Malformed("truncated token")
    token = data[pos:pos + token_length]
    pos += token_length

    options = []
    number = 0
    payload = b''
    while pos < len(data):
        first = data[pos]
        pos += 1
        if first == PAYLOAD_MARKER:
            payload = data[pos:]
            if not payload:
                raise Malformed("payload marker followed by empty payload")
            break
        delta, pos = _read_extended(data, pos, first >> 4, 'delta')
        length, pos = _read_extended(data, pos, first & 0x0F, 'length')
        if pos + length > len(data):
            raise Malformed("truncated option value")
        number += delta
        options.append((number, data[pos:pos + length]))
        pos += length

    return CoapMessage(msg_type, code, message_id, token, tuple(options), payload)


# ---------------------------------------------------------------------------
# Cipher suites

def _raw_ecdsa(der_signature):
    r, s = decode_dss_signature(der_signature)
    return r.to_bytes(32, 'big') + s.to_bytes(32, 'big')


@dataclass(frozen=True)
class CipherSuite:
    suite_id: int
    name: str
    signature: str
    signature_length: int
    tag_length: int
    key_length: int = 16
    nonce_length: int = 13

    def accepts_private(self, key):
        if self.signature == 'ed25519':
            return isinstance(key, ed25519.Ed25519PrivateKey)
        return isinstance(key, ec.EllipticCurvePrivateKey) and isinstance(key.curve, ec.SECP256R1)

    def accepts_public(self, key):
        if self.signature == 'ed25519':
            return isinstance(key, ed25519.Ed25519PublicKey)
        return isinstance(key, ec.EllipticCurvePublicKey) and isinstance(key.curve, ec.SECP256R1)

    def sign(self, private_key, data):
        if not self.accepts_private(private_key):
            raise KeyInvalid(f"{type(private_key).__name__} cannot sign under suite {self.name}")
        if self.signature == 'ed25519':
            return private_key.sign(data)
        return _raw_ecdsa(private_key.sign(data, ec.ECDSA(hashes.SHA256())))

    def verify(self, public_key, signature, data):
        if not self.accepts_public(public_key) or len(signature) != self.signature_length:
            return False
        try:
            if self.signature == 'ed25519':
                public_key.verify(signature, data)
            else:
                r = int.from_bytes(signature[:32], 'big')
                s = int.from_bytes(signature[32:], 'big')
                public_key.verify(encode_dss_signature(r, s), data, ec.ECDSA(hashes.SHA256()))
        except InvalidSignature:
            return False
        return True

    def seal(self, key, nonce, plaintext, associated_data):
        return AESCCM(key, tag_length=self.tag_length).encrypt(nonce, plaintext, associated_data)

    def open(self, key, nonce, ciphertext, associated_data):
        try:
            return AESCCM(key, tag_length=self.tag_length).decrypt(nonce, ciphertext, associated_data)
        except (InvalidTag, ValueError) as e:
            raise AuthFailure(f"AEAD open failed under suite {self.name}") from e


SUITES = {}


def register_suite(suite):
    if not 0 < suite.suite_id < 256:
        raise ValueError(f"suite id {suite.suite_id} does not fit one byte")
    SUITES[suite.suite_id] = suite
    return suite


register_suite(CipherSuite(1, 'ED25519-AES128CCM8', 'ed25519', 64, 8))
register_suite(CipherSuite(2, 'ECDSAP256-AES128CCM8', 'ecdsa-p256', 64, 8))
register_suite(CipherSuite(3, 'ED25519-AES128CCM16', 'ed25519', 64, 16))

DEFAULT_SUITE = 1


def get_suite(suite_id):
    try:
        return SUITES[suite_id]
    except KeyError:
        raise Malformed(f"unregistered cipher suite {suite_id}") from None


def suite_for_key(key):
    """Default suite for a signature key (private or public)."""
    if isinstance(key, (ed25519.Ed25519PrivateKey, ed25519.Ed25519PublicKey)):
        return DEFAULT_SUITE
    if isinstance(key, (ec.EllipticCurvePrivateKey, ec.EllipticCurvePublicKey)) and isinstance(key.curve, ec.SECP256R1):
        return 2
    raise KeyInvalid(f"no registered suite signs with {type(key).__name__}")


# ---------------------------------------------------------------------------
# Accept-cipher negotiation

def make_accept_cipher_option(suites):
    """Build the Accept-cipher option; value is one byte per suite id, most preferred first."""
    suites = list(suites)
    if not suites:
        raise ValueError("Accept-cipher needs at least one suite")
    if len(suites) > MAX_ACCEPT_CIPHER_SUITES:
        raise TooManySuites(f"{len(suites)} suites offered, at most {MAX_ACCEPT_CIPHER_SUITES} fit")
    for suite_id in suites:
        if not 0 <= suite_id < 256:
            raise ValueError(f"suite id {suite_id} does not fit one byte")
    return ACCEPT_CIPHER, bytes(suites)


def parse_accept_cipher(msg):
    """Preference-ordered suite ids from the request, or None when the option is absent."""
    values = msg.option_values(ACCEPT_CIPHER)
    if not values:
        return None
    return [suite_id for value in values for suite_id in value]


def negotiate_suite(offered, supported):
    """First suite in the client's preference order that the server supports, else None."""
    if offered is None:
        return supported[0] if supported else None
    for suite_id in offered:
        if suite_id in supported:
            return suite_id
    return None


# ---------------------------------------------------------------------------
# Duplicate detection

@dataclass
class Sighting:
    message_id: int
    arrival: float
    response: bytes = None


@dataclass
class DuplicateWindow:
    """
    Per-peer ring of recently seen MessageIDs; single writer per peer.

    Rings are kept in order of their newest sighting, so peers silent for
    longer than `span` are dropped from the front.
    """
    span: float = DEFAULT_DUPLICATE_SPAN
    ring_size: int = DEFAULT_DUPLICATE_RING
    rings: OrderedDict = field(default_factory=OrderedDict)

    def _find(self, peer, message_id, now):
        for sighting in reversed(self.rings.get(peer, ())):
            if sighting.message_id == message_id and now - sighting.arrival <= self.span:
                return sighting
        return None

    def expire(self, now):
        while self.rings:
            peer, ring = next(iter(self.rings.items()))
            if ring and now - ring[-1].arrival <= self.span:
                break
            del self.rings[peer]

    def check(self, peer, message_id, now):
        prior = self._find(peer, message_id, now)
        ring = self.rings.setdefault(peer, deque(maxlen=self.ring_size))
        ring.append(Sighting(message_id, now, prior.response if prior else None))
        self.rings.move_to_end(peer)
        self.expire(now)
        if prior:
            log.info(f"Duplicate MessageID {message_id} from {peer}")
        return prior is not None

    def remember_response(self, peer, message_id, response):
        ring = self.rings.get(peer)
        if not ring:
            return
        for sighting in reversed(ring):
            if sighting.message_id == message_id:
                sighting.response = response
                return

    def cached_response(self, peer, message_id, now):
        sighting = self._find(peer, message_id, now)
        return sighting.response if sighting else None

    def entry_count(self):
        return sum(len(ring) for ring in self.rings.values())

    def peer_count(self):
        return len(self.rings)


def check_duplicate(win, peer, message_id, now):
    """True iff (peer, message_id) was seen within the window span; always records the sighting."""
    return win.check(peer, message_id % MESSAGE_ID_MODULUS, now)
