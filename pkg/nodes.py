"""
Protocol roles: producer (constrained CoAP server holding offline-signed
representations), consumer (client that decrypts and verifies), the
Authorization Server, and the DTLS-PSK baseline session table.

Every role is an event-driven state machine. Handlers take the current time
as an argument and never sleep or spawn threads; the simulator or the socket
driver owns the loop.
"""

import hashlib
import hmac
import logging
import os
import struct
import time
from dataclasses import dataclass, field

import coap_core
import keymat
import objsec
from coap_core import Code, CoapMessage, MessageType
from exceptions import (
    AmbiguousScope,
    AuthFailure,
    CapabilityMismatch,
    CertificateExpired,
    Malformed,
    NoCookieMatch,
    NoSecret,
    NotAuthorized,
    OscarError,
    RequestRejected,
    UnknownPath,
    UnknownSigner,
    UnknownToken,
)
from models import CertificateRecord, Principal, ScopeGrant, SecretRecord

producer_log = logging.getLogger('ProducerNode')
consumer_log = logging.getLogger('ConsumerNode')
authz_log = logging.getLogger('AuthzServer')
dtls_log = logging.getLogger('DtlsBaseline')

DEFAULT_MAX_SLOTS = 3
COOKIE_LENGTH = 16
PENDING_COOKIE_LIMIT = 64
SECRET_PATH = '/secret'


@dataclass(frozen=True)
class RetransmitPolicy:
    """Confirmable retransmission: initial timeout doubling per attempt."""
    initial_timeout_s: float = 2.0
    max_attempts: int = 4

    def timeouts(self):
        return [self.initial_timeout_s * (2 ** attempt) for attempt in range(self.max_attempts)]


# ---------------------------------------------------------------------------
# Producer

@dataclass(frozen=True)
class ResignConfig:
    """Offline re-signing load: beta = t / N."""
    beta_s: float = 60.0
    n_resources: int = 4

    def __post_init__(self):
        if self.beta_s <= 0 or self.n_resources < 1:
            raise ValueError("beta_s must be positive and n_resources at least 1")

    @property
    def update_interval_s(self):
        """Average time t between updates of one resource."""
        return self.beta_s * self.n_resources


@dataclass
class CachedResource:
    plaintext: bytes
    signed: objsec.SecureObject
    refreshed_at: float = 0.0


@dataclass(frozen=True)
class Observer:
    token: bytes
    suite_id: int


@dataclass
class ProducerState:
    sender_id: str
    signing_key: object
    certificate: objsec.SecureObject = None
    resources: dict = field(default_factory=dict)
    secrets: list = field(default_factory=list)
    trust: keymat.TrustStore = field(default_factory=keymat.TrustStore)
    resign: ResignConfig = field(default_factory=ResignConfig)
    supported_suites: list = None
    duplicates: coap_core.DuplicateWindow = field(default_factory=coap_core.DuplicateWindow)
    signatures: int = 0
    observers: dict = field(default_factory=dict)  # path -> {peer: Observer}
    next_message_id: int = 0
    observe_seq: int = 0

    def __post_init__(self):
        if self.supported_suites is None:
            self.supported_suites = [coap_core.suite_for_key(self.signing_key)]

    @property
    def public_key(self):
        return self.signing_key.public_key()


def producer_install_secret(state, secret):
    """Provision an access secret directly (initial configuration)."""
    candidate = [s for s in state.secrets if s.key_id != secret.key_id] + [secret]
    keymat.check_scope_partition(candidate)
    state.secrets = candidate
    producer_log.info(f"{state.sender_id}: installed key_id {secret.key_id} epoch {secret.epoch}")


def _sign_resource(state, path, plaintext):
    try:
        key_id = keymat.lookup_secret_for_resource(state.secrets, path).key_id
    except (NoSecret, AmbiguousScope):
        key_id = 0
    signed = objsec.sign_object(plaintext, state.signing_key, state.sender_id, key_id=key_id)
    state.signatures += 1
    return signed


def producer_add_resource(state, path, plaintext, now=0.0):
    signed = _sign_resource(state, path, bytes(plaintext))
    state.resources[path] = CachedResource(bytes(plaintext), signed, now)
    return signed


def producer_refresh_resource(state, path, new_plaintext, now=0.0):
    """Re-sign a cached representation offline; returns the new signed object."""
    if path not in state.resources:
        raise UnknownPath(f"{state.sender_id} has no resource {path}")
    signed = _sign_resource(state, path, bytes(new_plaintext))
    state.resources[path] = CachedResource(bytes(new_plaintext), signed, now)
    producer_log.debug(f"{state.sender_id}: re-signed {path} at {now:.3f}")
    return signed


def stored_contexts(state):
    """Entries the producer holds outside the duplicate window and observer registrations; independent of how many peers asked."""
    return len(state.resources) + len(state.secrets)


def _reply(request, code, payload=b''):
    reply_type = MessageType.ACK if request.type == MessageType.CON else MessageType.NON
    return CoapMessage(reply_type, code, request.message_id, request.token, (), payload)


def _remember(state, peer, request, response):
    if peer is not None:
        state.duplicates.remember_response(peer, request.message_id, coap_core.encode_coap(response))
    return response


def _prior_response(state, peer, msg, now):
    if peer is None or not coap_core.check_duplicate(state.duplicates, peer, msg.message_id, now):
        return None
    cached = state.duplicates.cached_response(peer, msg.message_id, now)
    return coap_core.decode_coap(cached) if cached else None


def producer_handle_get(state, msg, peer=None, now=0.0):
    """
    Answer a GET with the cached signed representation, encrypted under a key
    bound to the request MessageID. Never raises for peer input.

    Args:
        state: ProducerState
        msg: decoded CoAP request
        peer: transport address used for duplicate detection (None disables it)
        now: current time in seconds

    Returns:
        CoapMessage response (2.05, or 4.00/4.01/4.02/4.04/4.06)
    """
    prior = _prior_response(state, peer, msg, now)
    if prior is not None:
        producer_log.info(f"{state.sender_id}: retransmitting response to duplicate {msg.message_id} from {peer}")
        return prior

    if msg.code != Code.GET:
        return _remember(state, peer, msg, _reply(msg, Code.BAD_REQUEST))
    if msg.unknown_critical_options():
        producer_log.warning(f"{state.sender_id}: unknown critical options {msg.unknown_critical_options()}")
        return _remember(state, peer, msg, _reply(msg, Code.BAD_OPTION))

    path = msg.path
    if path not in state.resources:
        return _remember(state, peer, msg, _reply(msg, Code.NOT_FOUND))

    suite_id = coap_core.negotiate_suite(coap_core.parse_accept_cipher(msg), state.supported_suites)
    if suite_id is None:
        producer_log.info(f"{state.sender_id}: no common suite for {path}")
        return _remember(state, peer, msg, _reply(msg, Code.NOT_ACCEPTABLE))

    try:
        observe = coap_core.parse_observe(msg)
    except Malformed as e:
        producer_log.warning(f"{state.sender_id}: {e}")
        return _remember(state, peer, msg, _reply(msg, Code.BAD_OPTION))

    try:
        payload = _encrypted_representation(state, path, msg.message_id, suite_id)
    except (NoSecret, AmbiguousScope) as e:
        producer_log.warning(f"{state.sender_id}: {e}")
        return _remember(state, peer, msg, _reply(msg, Code.UNAUTHORIZED))
    except OscarError as e:
        producer_log.error(f"{state.sender_id}: encrypting {path} failed: {e}")
        return _remember(state, peer, msg, _reply(msg, Code.INTERNAL_SERVER_ERROR))

    response = _reply(msg, Code.CONTENT, payload)
    observer_key = peer if peer is not None else msg.token
    if observe == coap_core.OBSERVE_REGISTER:
        state.observers.setdefault(path, {})[observer_key] = Observer(msg.token, suite_id)
        producer_log.info(f"{state.sender_id}: {observer_key} observes {path}")
        response = CoapMessage(response.type, response.code, response.message_id, response.token,
                               [coap_core.make_observe_option(state.observe_seq)], response.payload)
    elif observe == coap_core.OBSERVE_DEREGISTER:
        state.observers.get(path, {}).pop(observer_key, None)
    return _remember(state, peer, msg, response)


def _encrypted_representation(state, path, message_id, suite_id):
    """Cached signed representation of `path`, encrypted under the key bound to `message_id`."""
    secret = keymat.lookup_secret_for_resource(state.secrets, path)
    content_key = keymat.derive_content_key(secret, message_id, state.sender_id)
    header = objsec.ObjectHeader(cipher_suite_id=suite_id, signer_or_sender_id=state.sender_id,
                                 key_id=secret.key_id, binding_message_id=message_id)
    encrypted = objsec.encrypt_object(objsec.encode_object(state.resources[path].signed), content_key, header)
    return objsec.encode_object(encrypted)


def producer_notify(state, path, token, suite_id=None, message_id=None):
    """
    Server-initiated Non-confirmable 2.05 carrying the current representation
    of `path`, encrypted under the key bound to the notification's own MessageID.

    Args:
        state: ProducerState
        path: observed resource
        token: the observer's registration token
        suite_id: suite negotiated at registration (default: first supported)
        message_id: notification MessageID (default: the producer's counter)

    Returns:
        CoapMessage
    """
    if path not in state.resources:
        raise UnknownPath(f"{state.sender_id} has no resource {path}")
    if message_id is None:
        message_id = state.next_message_id
    message_id %= coap_core.MESSAGE_ID_MODULUS
    state.next_message_id = (message_id + 1) % coap_core.MESSAGE_ID_MODULUS
    state.observe_seq = (state.observe_seq + 1) % coap_core.OBSERVE_MODULUS
    payload = _encrypted_representation(state, path, message_id, suite_id or state.supported_suites[0])
    return CoapMessage(MessageType.NON, Code.CONTENT, message_id, token,
                       [coap_core.make_observe_option(state.observe_seq)], payload)


def producer_notifications(state, path):
    """One notification per registered observer of `path`, as (peer, message) pairs."""
    return [(peer, producer_notify(state, path, observer.token, observer.suite_id))
            for peer, observer in list(state.observers.get(path, {}).items())]


def producer_handle_put_secret(state, msg, peer=None, now=0.0):
    """Install an authority-signed access secret iff its epoch is newer; idempotent on re-PUT."""
    prior = _prior_response(state, peer, msg, now)
    if prior is not None:
        return prior
    if msg.code != Code.PUT:
        return _remember(state, peer, msg, _reply(msg, Code.BAD_REQUEST))
    if msg.path != SECRET_PATH:
        producer_log.warning(f"{state.sender_id}: PUT to {msg.path} refused, secrets live at {SECRET_PATH}")
        return _remember(state, peer, msg, _reply(msg, Code.NOT_FOUND))

    try:
        obj = objsec.decode_object(msg.payload)
        rotated = keymat.read_rotation(obj)
    except Malformed as e:
        producer_log.warning(f"{state.sender_id}: rejected malformed secret update: {e}")
        return _remember(state, peer, msg, _reply(msg, Code.BAD_REQUEST))

    if not state.trust.verified_by_anchor(obj):
        producer_log.warning(f"{state.sender_id}: secret update signed by {obj.header.signer_or_sender_id} "
                             f"does not verify under a trust anchor")
        return _remember(state, peer, msg, _reply(msg, Code.UNAUTHORIZED))

    current = next((s for s in state.secrets if s.key_id == rotated.key_id), None)
    if current is not None and rotated.epoch <= current.epoch:
        if rotated == current:
            return _remember(state, peer, msg, _reply(msg, Code.CHANGED))
        producer_log.warning(f"{state.sender_id}: stale epoch {rotated.epoch} for key_id {rotated.key_id} "
                             f"(current {current.epoch})")
        return _remember(state, peer, msg, _reply(msg, Code.UNAUTHORIZED))

    try:
        producer_install_secret(state, rotated)
    except AmbiguousScope as e:
        producer_log.warning(f"{state.sender_id}: {e}")
        return _remember(state, peer, msg, _reply(msg, Code.BAD_REQUEST))
    return _remember(state, peer, msg, _reply(msg, Code.CHANGED))


def producer_handle(state, msg, peer=None, now=0.0):
    """Dispatch a request to the GET or PUT handler."""
    if msg.code == Code.PUT:
        return producer_handle_put_secret(state, msg, peer, now)
    return producer_handle_get(state, msg, peer, now)


# ---------------------------------------------------------------------------
# Consumer

@dataclass
class CapabilityPolicy:
    """Path prefix -> capability the signer's certificate must list."""
    rules: dict = field(default_factory=dict)

    def required_for(self, path):
        best = None
        for prefix, capability in self.rules.items():
            base = prefix.rstrip('/')
            if path == prefix or path == base or path.startswith(base + '/'):
                if best is None or len(prefix) > len(best[0]):
                    best = (prefix, capability)
        return best[1] if best else None


@dataclass(frozen=True)
class PendingRequest:
    path: str
    message_id: int
    token: bytes
    sent_at: float = 0.0


@dataclass
class Subscription:
    """An Observe registration; last_seq is the newest notification sequence accepted."""
    path: str
    last_seq: int = None


@dataclass
class ConsumerState:
    consumer_id: str
    secrets: list = field(default_factory=list)
    trust: keymat.TrustStore = field(default_factory=keymat.TrustStore)
    suites: list = field(default_factory=lambda: [coap_core.DEFAULT_SUITE])
    policy: CapabilityPolicy = field(default_factory=CapabilityPolicy)
    pending: dict = field(default_factory=dict)
    subscriptions: dict = field(default_factory=dict)
    next_message_id: int = 0
    next_token: int = 0
    certificate_source: object = None
    verifications: int = 0


def consumer_install_grant(state, secrets, certificates):
    """Keep the newest epoch per key_id; certificates must chain to the consumer's anchors."""
    by_key = {s.key_id: s for s in state.secrets}
    for secret in secrets:
        held = by_key.get(secret.key_id)
        if held is None or secret.epoch > held.epoch:
            by_key[secret.key_id] = secret
    state.secrets = list(by_key.values())
    for cert in certificates:
        state.trust.add_certificate(cert)


def _expire_pending(state, now):
    """Forget requests whose exchange lifetime has passed without an acceptable response."""
    stale = [token for token, p in state.pending.items()
             if now - p.sent_at > coap_core.DEFAULT_DUPLICATE_SPAN]
    for token in stale:
        consumer_log.debug(f"{state.consumer_id}: gave up on {state.pending[token].path} "
                           f"(MessageID {state.pending[token].message_id})")
        del state.pending[token]


def consumer_request(state, path, message_id=None, now=0.0, confirmable=True, observe=None, token=None):
    """Build a GET for `path`; raises NoSecret before anything is sent."""
    keymat.lookup_secret_for_resource(state.secrets, path)
    _expire_pending(state, now)
    if message_id is None:
        message_id = state.next_message_id
    message_id %= coap_core.MESSAGE_ID_MODULUS
    state.next_message_id = (message_id + 1) % coap_core.MESSAGE_ID_MODULUS
    if token is None:
        token = struct.pack('>I', state.next_token & 0xFFFFFFFF)
        state.next_token += 1
    options = coap_core.uri_path_options(path) + [coap_core.make_accept_cipher_option(state.suites)]
    if observe is not None:
        options.append(coap_core.make_observe_option(observe))
    msg_type = MessageType.CON if confirmable else MessageType.NON
    request = CoapMessage(msg_type, Code.GET, message_id, token, options)
    state.pending[token] = PendingRequest(path, message_id, token, now)
    return request


def consumer_subscribe(state, path, message_id=None, now=0.0):
    """GET with Observe=0; notifications for `path` then arrive under the request's token."""
    request = consumer_request(state, path, message_id, now, observe=coap_core.OBSERVE_REGISTER)
    state.subscriptions[request.token] = Subscription(path)
    return request


def consumer_unsubscribe(state, token, message_id=None, now=0.0):
    """GET with Observe=1 under the subscription's token; the registration is forgotten at once."""
    subscription = state.subscriptions.pop(token, None)
    if subscription is None:
        raise UnknownToken(f"no subscription for token {token.hex()}")
    return consumer_request(state, subscription.path, message_id, now,
                            observe=coap_core.OBSERVE_DEREGISTER, token=token)


def _signer_certificate(state, signer_id):
    cert = state.trust.get(signer_id)
    if cert is None and state.certificate_source is not None:
        fetched = state.certificate_source(signer_id)
        if fetched is not None:
            state.trust.add_certificate(fetched)
            consumer_log.info(f"{state.consumer_id}: fetched certificate for {signer_id}")
            cert = fetched
    if cert is None:
        raise UnknownSigner(f"no certificate for signer {signer_id}")
    return cert


def _open_payload(state, path, message_id, payload, now):
    """Decrypt an Encrypted object bound to `message_id` and verify the signed object inside."""
    obj = objsec.decode_object(payload)
    if obj.kind != objsec.ObjectKind.ENCRYPTED:
        raise Malformed(f"expected an encrypted object, got {obj.kind.name}")
    if obj.header.binding_message_id != message_id:
        raise AuthFailure(f"payload bound to MessageID {obj.header.binding_message_id}, "
                          f"message used {message_id}")

    covering = [s for s in state.secrets if s.covers(path) and s.key_id == obj.header.key_id]
    if not covering:
        raise NoSecret(f"no secret with key_id {obj.header.key_id} for {path}")
    secret = max(covering, key=lambda s: s.epoch)
    sender_id = obj.header.signer_or_sender_id
    content_key = keymat.derive_content_key(secret, message_id, sender_id)
    inner = objsec.decode_object(objsec.decrypt_object(obj, content_key), depth=2)

    if inner.kind != objsec.ObjectKind.SIGNED:
        raise AuthFailure(f"nested object is {inner.kind.name}, not signed")
    if inner.header.signer_or_sender_id != sender_id:
        raise AuthFailure(f"nested signer {inner.header.signer_or_sender_id} differs from sender {sender_id}")

    cert = _signer_certificate(state, sender_id)
    certificate = objsec.certificate_payload(cert)
    if now is None:
        now = int(time.time())
    if not certificate.is_valid_at(now):
        raise CertificateExpired(f"certificate of {sender_id} not valid at {now}")
    required = state.policy.required_for(path)
    if required is not None and required not in certificate.capabilities:
        raise CapabilityMismatch(f"{sender_id} is not certified as {required} for {path}")

    state.verifications += 1
    if not objsec.verify_object(inner, objsec.load_public_key(certificate.public_key)):
        raise AuthFailure(f"signature of {sender_id} does not verify")
    consumer_log.debug(f"{state.consumer_id}: verified {len(inner.body)} bytes from {sender_id}")
    return inner.body


def consumer_accept_response(state, request, response, now=None):
    """
    Decrypt and verify a response; returns the producer's payload only after
    the nested signature, certificate validity and capability checks pass.
    A response that fails verification leaves the request pending.
    """
    pending = state.pending.get(request.token)
    if pending is None or response.token != request.token:
        raise UnknownToken(f"no pending request for token {response.token.hex()}")
    if response.code != Code.CONTENT:
        del state.pending[request.token]
        state.subscriptions.pop(request.token, None)
        raise RequestRejected(Code(response.code), f"{pending.path} answered {Code(response.code).dotted}")

    body = _open_payload(state, pending.path, request.message_id, response.payload, now)
    del state.pending[request.token]
    subscription = state.subscriptions.get(request.token)
    if subscription is not None:
        subscription.last_seq = coap_core.parse_observe(response)
    return body


def _is_fresher(seq, last):
    if last is None:
        return True
    return 0 < (seq - last) % coap_core.OBSERVE_MODULUS < coap_core.OBSERVE_MODULUS // 2


def consumer_accept_notification(state, notification, now=None):
    """
    Accept an asynchronous 2.05 pushed under a subscription token. The payload
    is bound to the notification's own MessageID and its Observe sequence must
    move forward.
    """
    subscription = state.subscriptions.get(notification.token)
    if subscription is None:
        raise UnknownToken(f"no subscription for token {notification.token.hex()}")
    if notification.code != Code.CONTENT:
        del state.subscriptions[notification.token]
        raise RequestRejected(Code(notification.code),
                              f"{subscription.path} notified {Code(notification.code).dotted}")
    seq = coap_core.parse_observe(notification)
    if seq is None:
        raise Malformed("notification without an Observe option")
    if not _is_fresher(seq, subscription.last_seq):
        raise AuthFailure(f"notification {seq} for {subscription.path} is not newer than {subscription.last_seq}")

    body = _open_payload(state, subscription.path, notification.message_id, notification.payload, now)
    subscription.last_seq = seq
    return body


# ---------------------------------------------------------------------------
# Authorization Server

@dataclass(frozen=True)
class AuthenticatedPrincipal:
    name: str
    granted_paths: tuple


@dataclass
class AuthzServerState:
    authority_id: str
    authority_key: object
    registry: object  # sessionmaker from models.create_registry


def authz_register_principal(state, name, credential, scope=()):
    with state.registry() as session:
        principal = Principal.register(session, name, credential)
        for path in scope:
            ScopeGrant.grant(session, principal, path)
        authz_log.info(f"Registered principal {name} with scope {sorted(scope)}")
        return principal.to_dict()


def authz_authenticate(state, name, credential):
    """Check pre-shared principal credentials; stands in for the secure channel."""
    with state.registry() as session:
        principal = Principal.get_by_name(session, name)
        if principal is None or not principal.check_credential(credential):
            authz_log.warning(f"Authentication failed for {name}")
            raise NotAuthorized(f"authentication failed for {name}")
        return AuthenticatedPrincipal(principal.name, tuple(principal.granted_paths))


def authz_register_secret(state, secret):
    with state.registry() as session:
        latest = SecretRecord.latest_for_key(session, secret.key_id)
        if latest is not None and secret.epoch <= latest.epoch:
            raise ValueError(f"key_id {secret.key_id} already at epoch {latest.epoch}")
        others = [r.to_access_secret() for r in SecretRecord.latest_all(session) if r.key_id != secret.key_id]
        keymat.check_scope_partition(others + [secret])
        SecretRecord.store(session, secret)
    authz_log.info(f"Registered key_id {secret.key_id} epoch {secret.epoch} for {list(secret.resource_scope)}")
    return secret


def authz_rotate_secret(state, key_id, new_secret=None):
    """Store the next epoch and return it with the authority-signed PUT payload."""
    with state.registry() as session:
        latest = SecretRecord.latest_for_key(session, key_id)
        if latest is None:
            raise NoSecret(f"no access secret with key_id {key_id}")
        old = latest.to_access_secret()
    new_secret = new_secret or keymat.generate_secret(len(old.secret))
    obj = keymat.rotate_access_secret(old, new_secret, state.authority_key, state.authority_id)
    rotated = keymat.read_rotation(obj)
    authz_register_secret(state, rotated)
    return rotated, obj


def authz_publish_certificate(state, cert, served_paths=()):
    subject = objsec.certificate_payload(cert).subject_id
    with state.registry() as session:
        CertificateRecord.publish(session, subject, objsec.encode_object(cert), served_paths)
    authz_log.info(f"Published certificate of {subject} serving {list(served_paths)}")


def authz_fetch_certificate(state, subject_id):
    with state.registry() as session:
        record = CertificateRecord.get_by_subject(session, subject_id)
        return objsec.decode_object(record.encoded) if record else None


def authz_grant(state, principal, scope):
    """
    Release the secrets and producer certificates covering `scope`.

    Args:
        state: AuthzServerState
        principal: AuthenticatedPrincipal from authz_authenticate
        scope: resource path or list of paths

    Returns:
        (list of AccessSecret at their highest epoch, list of certificate objects)
    """
    if not isinstance(principal, AuthenticatedPrincipal):
        raise NotAuthorized("principal has not been authenticated")
    paths = [scope] if isinstance(scope, str) else list(scope)
    with state.registry() as session:
        current = Principal.get_by_name(session, principal.name)
        granted = set(current.granted_paths) if current else set()
        refused = [p for p in paths if p not in granted]
        if refused:
            authz_log.warning(f"{principal.name} asked for ungranted {refused}")
            raise NotAuthorized(f"{principal.name} is not granted {refused}")

        secrets = [r.to_access_secret() for r in SecretRecord.latest_all(session)]
        released = [s for s in secrets
                    if set(s.resource_scope) & set(paths) and set(s.resource_scope) <= granted]
        if not released:
            raise NoSecret(f"no releasable secret covers {paths}")
        certificates = [objsec.decode_object(r.encoded) for r in CertificateRecord.serving(session, paths)]
    authz_log.info(f"Granted {principal.name} key_ids {[s.key_id for s in released]} "
                   f"and {len(certificates)} certificate(s)")
    return released, certificates


def consumer_obtain_grant(state, authz, principal, scope):
    """Fetch secrets and certificates from the Authorization Server and install them."""
    secrets, certificates = authz_grant(authz, principal, scope)
    consumer_install_grant(state, secrets, certificates)
    return secrets, certificates


# ---------------------------------------------------------------------------
# DTLS-PSK baseline

@dataclass
class DtlsSlot:
    peer: object
    last_used: float
    established: bool = False


@dataclass(frozen=True)
class ClientHello:
    peer: object
    now: float
    cookie: bytes = None


@dataclass(frozen=True)
class HandshakeContinue:
    """Client key exchange, ChangeCipherSpec and Finished flight."""
    peer: object
    now: float


@dataclass(frozen=True)
class AppData:
    peer: object
    now: float
    size: int = 0


@dataclass(frozen=True)
class Timeout:
    peer: object
    now: float


@dataclass(frozen=True)
class HelloVerifyRequest:
    peer: object
    cookie: bytes


@dataclass(frozen=True)
class ServerHelloFlight:
    peer: object


@dataclass(frozen=True)
class ServerFinished:
    peer: object


@dataclass(frozen=True)
class CloseAlert:
    peer: object


@dataclass(frozen=True)
class AppDataAccepted:
    peer: object
    size: int = 0


@dataclass
class DtlsSessionTable:
    max_slots: int = DEFAULT_MAX_SLOTS
    slots: list = None
    pending_cookies: dict = field(default_factory=dict)
    cookie_secret: bytes = field(default_factory=lambda: os.urandom(16))

    def __post_init__(self):
        if self.max_slots < 1:
            raise ValueError("max_slots must be at least 1")
        if self.slots is None:
            self.slots = [None] * self.max_slots

    def copy(self):
        return DtlsSessionTable(
            self.max_slots,
            [None if s is None else DtlsSlot(s.peer, s.last_used, s.established) for s in self.slots],
            dict(self.pending_cookies),
            self.cookie_secret,
        )

    def slot_of(self, peer):
        for index, slot in enumerate(self.slots):
            if slot is not None and slot.peer == peer:
                return index
        return None

    def established_peers(self):
        return [s.peer for s in self.slots if s is not None and s.established]

    def occupied(self):
        return sum(1 for s in self.slots if s is not None)

    def lru_index(self):
        """Slot with the smallest last_used; ties go to the lowest index."""
        occupied = [(slot.last_used, index) for index, slot in enumerate(self.slots) if slot is not None]
        return min(occupied)[1] if occupied else None

    def cookie_for(self, peer):
        return hmac.new(self.cookie_secret, repr(peer).encode('utf-8'), hashlib.sha256).digest()[:COOKIE_LENGTH]


def _check_cookie(table, event):
    if event.cookie is None or not hmac.compare_digest(event.cookie, table.cookie_for(event.peer)):
        raise NoCookieMatch(f"cookie from {event.peer} does not match")
    table.pending_cookies.pop(event.peer, None)


def dtls_baseline_handle(table, event):
    """
    One step of the baseline server; returns (actions, new_table) and leaves
    `table` untouched. Sessions are only evicted once a client has echoed a
    valid cookie.
    """
    table = table.copy()
    actions = []

    if isinstance(event, ClientHello):
        if event.cookie is None:
            cookie = table.cookie_for(event.peer)
            table.pending_cookies.pop(event.peer, None)
            table.pending_cookies[event.peer] = cookie
            while len(table.pending_cookies) > PENDING_COOKIE_LIMIT:
                table.pending_cookies.pop(next(iter(table.pending_cookies)))
            return [HelloVerifyRequest(event.peer, cookie)], table
        try:
            _check_cookie(table, event)
        except NoCookieMatch as e:
            dtls_log.debug(f"Dropped ClientHello: {e}")
            return [], table

        index = table.slot_of(event.peer)
        if index is None:
            free = [i for i, slot in enumerate(table.slots) if slot is None]
            if free:
                index = free[0]
            else:
                index = table.lru_index()
                evicted = table.slots[index].peer
                dtls_log.info(f"Evicting LRU session of {evicted} for {event.peer}")
                actions.append(CloseAlert(evicted))
        table.slots[index] = DtlsSlot(event.peer, event.now, established=False)
        actions.append(ServerHelloFlight(event.peer))
        return actions, table

    index = table.slot_of(event.peer)

    if isinstance(event, HandshakeContinue):
        if index is None:
            return [CloseAlert(event.peer)], table
        slot = table.slots[index]
        slot.established = True
        slot.last_used = event.now
        return [ServerFinished(event.peer)], table

    if isinstance(event, AppData):
        if index is None or not table.slots[index].established:
            return [CloseAlert(event.peer)], table
        table.slots[index].last_used = event.now
        return [AppDataAccepted(event.peer, event.size)], table

    if isinstance(event, Timeout):
        if index is not None:
            table.slots[index] = None
        table.pending_cookies.pop(event.peer, None)
        return [], table

    raise TypeError(f"unknown DTLS event {type(event).__name__}")
