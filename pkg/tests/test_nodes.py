import random
from dataclasses import replace

import pytest
from cryptography.hazmat.primitives.asymmetric import ed25519

import coap_core
import keymat
import nodes
import objsec
from coap_core import Code, CoapMessage, MessageType
from conftest import PAYLOAD
from exceptions import (
    AuthFailure,
    CapabilityMismatch,
    CertificateExpired,
    Malformed,
    NoSecret,
    NotAuthorized,
    OscarError,
    RequestRejected,
    UnknownPath,
    UnknownSigner,
    UnknownToken,
)


def _get(path, message_id=42, suites=(1,), msg_type=MessageType.CON):
    options = coap_core.uri_path_options(path)
    if suites:
        options.append(coap_core.make_accept_cipher_option(list(suites)))
    return CoapMessage(msg_type, Code.GET, message_id, b'\x0a', options)


def _put(obj, message_id=100):
    return CoapMessage(MessageType.CON, Code.PUT, message_id, b'\x0b',
                       coap_core.uri_path_options('/secret'), objsec.encode_object(obj))


# ---------------------------------------------------------------------------
# Producer

def test_cached_resource_verifies(producer, producer_key):
    cached = producer.resources['/temp']
    assert cached.plaintext == PAYLOAD
    assert cached.signed.header.key_id == 7
    assert objsec.verify_object(cached.signed, producer_key.public_key())


def test_refresh_resource(producer, producer_key):
    first = nodes.producer_refresh_resource(producer, '/temp', b'22.0C@2024-05-01T12:05Z..', now=300.0)
    second = nodes.producer_refresh_resource(producer, '/temp', b'22.5C@2024-05-01T12:10Z..', now=600.0)
    assert first != second
    assert producer.resources['/temp'].signed == second
    assert producer.resources['/temp'].refreshed_at == 600.0
    assert objsec.verify_object(second, producer_key.public_key())
    with pytest.raises(UnknownPath):
        nodes.producer_refresh_resource(producer, '/unknown', b'x')


def test_resign_interval():
    config = nodes.ResignConfig(beta_s=60.0, n_resources=4)
    assert config.update_interval_s == 240.0
    with pytest.raises(ValueError):
        nodes.ResignConfig(beta_s=0)


def test_retransmit_policy():
    assert nodes.RetransmitPolicy().timeouts() == [2.0, 4.0, 8.0, 16.0]


def test_get_returns_bound_encrypted_object(producer, secret, producer_key):
    response = nodes.producer_handle_get(producer, _get('/temp', 42))
    assert response.code == Code.CONTENT
    assert response.type == MessageType.ACK
    assert (response.message_id, response.token) == (42, b'\x0a')

    obj = objsec.decode_object(response.payload)
    assert obj.kind == objsec.ObjectKind.ENCRYPTED
    assert obj.header.binding_message_id == 42
    assert obj.header.signer_or_sender_id == 'prod-01'
    key = keymat.derive_content_key(secret, 42, 'prod-01')
    inner = objsec.decode_object(objsec.decrypt_object(obj, key), depth=2)
    assert inner.body == PAYLOAD
    assert objsec.verify_object(inner, producer_key.public_key())


def test_non_confirmable_request_gets_non_reply(producer):
    response = nodes.producer_handle_get(producer, _get('/temp', 5, msg_type=MessageType.NON))
    assert response.type == MessageType.NON
    assert response.code == Code.CONTENT


@pytest.mark.parametrize('suites', [(3, 4), (9,)])
def test_get_without_common_suite(producer, suites):
    assert nodes.producer_handle_get(producer, _get('/temp', suites=suites)).code == Code.NOT_ACCEPTABLE


def test_get_without_accept_cipher_uses_default_suite(producer):
    response = nodes.producer_handle_get(producer, _get('/temp', suites=()))
    assert objsec.decode_object(response.payload).header.cipher_suite_id == 1


def test_get_error_codes(producer):
    assert nodes.producer_handle_get(producer, _get('/nothing')).code == Code.NOT_FOUND
    nodes.producer_add_resource(producer, '/unscoped', b'x')
    assert nodes.producer_handle_get(producer, _get('/unscoped')).code == Code.UNAUTHORIZED
    critical = CoapMessage(MessageType.CON, Code.GET, 1, b'', coap_core.uri_path_options('/temp') + [(9, b'?')])
    assert nodes.producer_handle_get(producer, critical).code == Code.BAD_OPTION
    post = CoapMessage(MessageType.CON, Code.POST, 2, b'', coap_core.uri_path_options('/temp'))
    assert nodes.producer_handle(producer, post).code == Code.BAD_REQUEST


def test_duplicate_request_gets_identical_response(producer):
    request = _get('/temp', 77)
    first = nodes.producer_handle_get(producer, request, peer='10.0.0.2', now=0.0)
    nodes.producer_refresh_resource(producer, '/temp', b'changed', now=1.0)
    again = nodes.producer_handle_get(producer, request, peer='10.0.0.2', now=2.0)
    assert coap_core.encode_coap(again) == coap_core.encode_coap(first)
    fresh = nodes.producer_handle_get(producer, request, peer='10.0.0.3', now=2.0)
    assert fresh.payload != first.payload


def test_producer_state_does_not_grow_with_peers(producer):
    baseline = nodes.stored_contexts(producer)
    for i in range(50):
        nodes.producer_handle_get(producer, _get('/temp', i), peer=f"peer-{i}", now=float(i))
        assert nodes.stored_contexts(producer) == baseline
    for i in range(100):
        nodes.producer_handle_get(producer, _get('/temp', i), peer='busy', now=float(i))
    assert len(producer.duplicates.rings['busy']) == 32


def test_put_secret_installs_newer_epoch(producer, authority_key, secret):
    rotation = keymat.rotate_access_secret(secret, b'\x42' * 16, authority_key)
    response = nodes.producer_handle(producer, _put(rotation))
    assert response.code == Code.CHANGED
    installed = keymat.lookup_secret_for_resource(producer.secrets, '/temp')
    assert (installed.epoch, installed.secret) == (4, b'\x42' * 16)


def test_put_secret_rejects_replayed_epoch(producer, authority_key):
    older = keymat.AccessSecret(7, b'\x01' * 16, ('/temp',), 2)
    replayed = keymat.rotate_access_secret(older, b'\x09' * 16, authority_key)
    before = list(producer.secrets)
    assert nodes.producer_handle_put_secret(producer, _put(replayed)).code == Code.UNAUTHORIZED
    assert producer.secrets == before


def test_put_secret_rejects_non_anchor_signer(producer, secret):
    rogue = ed25519.Ed25519PrivateKey.generate()
    rotation = keymat.rotate_access_secret(secret, b'\x42' * 16, rogue)
    before = list(producer.secrets)
    assert nodes.producer_handle_put_secret(producer, _put(rotation)).code == Code.UNAUTHORIZED
    assert producer.secrets == before


def test_put_secret_is_idempotent(producer, authority_key, secret):
    rotation = keymat.rotate_access_secret(secret, b'\x42' * 16, authority_key)
    assert nodes.producer_handle_put_secret(producer, _put(rotation, 100)).code == Code.CHANGED
    once = list(producer.secrets)
    assert nodes.producer_handle_put_secret(producer, _put(rotation, 101)).code == Code.CHANGED
    assert producer.secrets == once


def test_put_secret_rejects_garbage(producer):
    garbage = CoapMessage(MessageType.CON, Code.PUT, 1, b'', coap_core.uri_path_options('/secret'), b'\x01\x02')
    assert nodes.producer_handle_put_secret(producer, garbage).code == Code.BAD_REQUEST


def test_put_secret_outside_secret_path_is_not_found(producer, authority_key, secret):
    rotation = keymat.rotate_access_secret(secret, b'\x42' * 16, authority_key)
    misdirected = replace(_put(rotation), options=tuple(coap_core.uri_path_options('/temp')))
    before = list(producer.secrets)
    assert nodes.producer_handle(producer, misdirected).code == Code.NOT_FOUND
    assert producer.secrets == before
    assert nodes.producer_handle(producer, _put(rotation, 101)).code == Code.CHANGED


def test_old_key_stops_working_after_rotation(producer, consumer, authority_key, secret):
    rotation = keymat.rotate_access_secret(secret, b'\x42' * 16, authority_key)
    nodes.producer_handle(producer, _put(rotation))
    request = nodes.consumer_request(consumer, '/temp')
    with pytest.raises(AuthFailure):
        nodes.consumer_accept_response(consumer, request, nodes.producer_handle(producer, request))

    nodes.consumer_install_grant(consumer, [keymat.read_rotation(rotation)], [])
    request = nodes.consumer_request(consumer, '/temp')
    assert nodes.consumer_accept_response(consumer, request, nodes.producer_handle(producer, request)) == PAYLOAD


# ---------------------------------------------------------------------------
# Consumer

def test_consumer_request(consumer):
    request = nodes.consumer_request(consumer, '/temp', message_id=12)
    assert request.type == MessageType.CON
    assert request.code == Code.GET
    assert request.path == '/temp'
    assert request.option_values(65001) == [b'\x01']
    assert request.token in consumer.pending


def test_consumer_request_without_secret(consumer):
    with pytest.raises(NoSecret):
        nodes.consumer_request(consumer, '/door')
    assert consumer.pending == {}


def test_consumer_message_ids_wrap(consumer):
    consumer.next_message_id = 65535
    assert nodes.consumer_request(consumer, '/temp').message_id == 65535
    assert nodes.consumer_request(consumer, '/temp').message_id == 0
    assert nodes.consumer_request(consumer, '/temp').message_id == 1


def test_end_to_end(producer, consumer):
    request = nodes.consumer_request(consumer, '/temp', message_id=42)
    response = nodes.producer_handle(producer, request, peer='cons-01', now=0.0)
    assert nodes.consumer_accept_response(consumer, request, response) == PAYLOAD
    assert consumer.verifications == 1
    assert request.token not in consumer.pending


def test_replayed_response_is_rejected(producer, consumer, secret):
    old_request = nodes.consumer_request(consumer, '/temp', message_id=42)
    captured = nodes.producer_handle(producer, old_request)
    new_request = nodes.consumer_request(consumer, '/temp', message_id=43)
    replay = replace(captured, message_id=43, token=new_request.token)
    with pytest.raises(AuthFailure):
        nodes.consumer_accept_response(consumer, new_request, replay)

    # rebinding the header to the new MessageID does not help: the key differs
    obj = objsec.decode_object(captured.payload)
    rebound = replace(obj, header=replace(obj.header, binding_message_id=43))
    forged = replace(replay, payload=objsec.encode_object(rebound))
    with pytest.raises(AuthFailure):
        nodes.consumer_accept_response(consumer, new_request, forged)


def test_replay_rejection_randomized(producer, consumer):
    rng = random.Random(2024)
    for _ in range(1000):
        mid = rng.randrange(1 << 16)
        other = (mid + rng.randrange(1, 1 << 16)) % (1 << 16)
        captured = nodes.producer_handle(producer, nodes.consumer_request(consumer, '/temp', message_id=mid))
        request = nodes.consumer_request(consumer, '/temp', message_id=other)
        with pytest.raises(AuthFailure):
            nodes.consumer_accept_response(consumer, request, replace(captured, message_id=other,
                                                                      token=request.token))
        consumer.pending.clear()


def test_unknown_token(consumer, producer):
    request = nodes.consumer_request(consumer, '/temp')
    response = nodes.producer_handle(producer, request)
    with pytest.raises(UnknownToken):
        nodes.consumer_accept_response(consumer, request, replace(response, token=b'\xff'))


def test_error_response_is_surfaced(consumer, producer):
    request = nodes.consumer_request(consumer, '/temp')
    rejected = CoapMessage(MessageType.ACK, Code.UNAUTHORIZED, request.message_id, request.token)
    with pytest.raises(RequestRejected) as info:
        nodes.consumer_accept_response(consumer, request, rejected)
    assert info.value.code == Code.UNAUTHORIZED


def test_capability_mismatch(producer, consumer):
    consumer.policy = nodes.CapabilityPolicy({'/': 'camera', '/temp': 'humidity-sensor'})
    request = nodes.consumer_request(consumer, '/temp')
    with pytest.raises(CapabilityMismatch):
        nodes.consumer_accept_response(consumer, request, nodes.producer_handle(producer, request))


def test_capability_policy_longest_prefix():
    policy = nodes.CapabilityPolicy({'/': 'any-sensor', '/temp': 'temperature-sensor'})
    assert policy.required_for('/temp') == 'temperature-sensor'
    assert policy.required_for('/temp/inside') == 'temperature-sensor'
    assert policy.required_for('/temperature') == 'any-sensor'
    assert nodes.CapabilityPolicy().required_for('/temp') is None


def test_expired_certificate(producer, consumer):
    request = nodes.consumer_request(consumer, '/temp')
    with pytest.raises(CertificateExpired):
        nodes.consumer_accept_response(consumer, request, nodes.producer_handle(producer, request), now=2 ** 40)


def test_unknown_signer(producer, anchor_key, secret, certificate):
    consumer = nodes.ConsumerState('cons-02')
    consumer.trust.add_anchor(anchor_key.public_key())
    nodes.consumer_install_grant(consumer, [secret], [])
    request = nodes.consumer_request(consumer, '/temp')
    with pytest.raises(UnknownSigner):
        nodes.consumer_accept_response(consumer, request, nodes.producer_handle(producer, request))

    consumer.certificate_source = lambda subject: certificate if subject == 'prod-01' else None
    request = nodes.consumer_request(consumer, '/temp')
    assert nodes.consumer_accept_response(consumer, request, nodes.producer_handle(producer, request)) == PAYLOAD
    assert consumer.trust.get('prod-01') == certificate


def test_fetched_certificate_must_chain_to_anchor(producer, secret, certificate):
    consumer = nodes.ConsumerState('cons-03', certificate_source=lambda subject: certificate)
    consumer.trust.add_anchor(ed25519.Ed25519PrivateKey.generate().public_key())
    nodes.consumer_install_grant(consumer, [secret], [])
    request = nodes.consumer_request(consumer, '/temp')
    with pytest.raises(UnknownSigner):
        nodes.consumer_accept_response(consumer, request, nodes.producer_handle(producer, request))


def test_forgeries_with_disclosed_secrets_are_rejected(producer, consumer, secret):
    # the adversary holds every access secret but not the producer's signing key
    rng = random.Random(99)
    attacker = ed25519.Ed25519PrivateKey.generate()
    genuine = producer.resources['/temp'].signed
    accepted = 0
    for i in range(1000):
        request = nodes.consumer_request(consumer, '/temp')
        style = i % 4
        if style == 0:
            inner = objsec.encode_object(objsec.sign_object(rng.randbytes(25), attacker, 'prod-01', key_id=7))
        elif style == 1:
            inner = objsec.encode_object(replace(genuine, body=rng.randbytes(25)))
        elif style == 2:
            inner = objsec.encode_object(replace(genuine, auth=rng.randbytes(64)))
        else:
            inner = rng.randbytes(rng.randint(1, 120))
        header = objsec.ObjectHeader(signer_or_sender_id='prod-01', key_id=7, binding_message_id=request.message_id)
        key = keymat.derive_content_key(secret, request.message_id, 'prod-01')
        payload = objsec.encode_object(objsec.encrypt_object(inner, key, header))
        response = CoapMessage(MessageType.ACK, Code.CONTENT, request.message_id, request.token, (), payload)
        try:
            nodes.consumer_accept_response(consumer, request, response)
            accepted += 1
        except OscarError:
            pass
    assert accepted == 0



def test_failed_verification_keeps_request_pending_until_it_expires(producer, consumer):
    request = nodes.consumer_request(consumer, '/temp', now=0.0)
    response = nodes.producer_handle(producer, request)
    forged = replace(response, payload=response.payload[:-1] + bytes([response.payload[-1] ^ 1]))
    with pytest.raises(AuthFailure):
        nodes.consumer_accept_response(consumer, request, forged)
    assert request.token in consumer.pending
    assert nodes.consumer_accept_response(consumer, request, response) == PAYLOAD

    stale = nodes.consumer_request(consumer, '/temp', now=10.0)
    fresh = nodes.consumer_request(consumer, '/temp', now=200.0)
    assert set(consumer.pending) == {stale.token, fresh.token}
    later = nodes.consumer_request(consumer, '/temp', now=300.0)
    assert set(consumer.pending) == {fresh.token, later.token}
    with pytest.raises(UnknownToken):
        nodes.consumer_accept_response(consumer, stale, nodes.producer_handle(producer, stale))


# ---------------------------------------------------------------------------
# Observe

def _subscribe(producer, consumer, peer='cons-01', message_id=500):
    request = nodes.consumer_subscribe(consumer, '/temp', message_id=message_id)
    response = nodes.producer_handle(producer, request, peer=peer, now=0.0)
    assert nodes.consumer_accept_response(consumer, request, response) == PAYLOAD
    return request


def test_observe_registration(producer, consumer):
    request = _subscribe(producer, consumer)
    assert coap_core.parse_observe(request) == coap_core.OBSERVE_REGISTER
    assert producer.observers['/temp']['cons-01'] == nodes.Observer(request.token, 1)
    assert consumer.subscriptions[request.token] == nodes.Subscription('/temp', 0)


def test_notification_is_bound_to_its_own_message_id(producer, consumer):
    request = _subscribe(producer, consumer)
    nodes.producer_refresh_resource(producer, '/temp', b'23.0C@2024-05-01T12:05Z..', now=240.0)
    [(peer, notification)] = nodes.producer_notifications(producer, '/temp')
    assert peer == 'cons-01'
    assert notification.type == MessageType.NON
    assert notification.code == Code.CONTENT
    assert notification.token == request.token
    assert coap_core.parse_observe(notification) == 1

    obj = objsec.decode_object(notification.payload)
    assert obj.header.binding_message_id == notification.message_id
    assert notification.message_id != request.message_id
    assert nodes.consumer_accept_notification(consumer, notification) == b'23.0C@2024-05-01T12:05Z..'
    assert consumer.subscriptions[request.token].last_seq == 1


def test_replayed_notification_is_rejected(producer, consumer):
    request = _subscribe(producer, consumer)
    first = nodes.producer_notify(producer, '/temp', request.token)
    second = nodes.producer_notify(producer, '/temp', request.token)
    assert nodes.consumer_accept_notification(consumer, second) == PAYLOAD
    for stale in (first, second):
        with pytest.raises(AuthFailure):
            nodes.consumer_accept_notification(consumer, stale)


def test_notification_moved_to_another_message_id_fails(producer, consumer):
    request = _subscribe(producer, consumer)
    notification = nodes.producer_notify(producer, '/temp', request.token)
    with pytest.raises(AuthFailure):
        nodes.consumer_accept_notification(consumer, replace(notification, message_id=notification.message_id + 1))
    assert consumer.subscriptions[request.token].last_seq == 0
    assert nodes.consumer_accept_notification(consumer, notification) == PAYLOAD


def test_observe_sequence_wraps():
    assert nodes._is_fresher(0, (1 << 24) - 1)
    assert nodes._is_fresher(5, None)
    assert not nodes._is_fresher(5, 5)
    assert not nodes._is_fresher(4, 5)


def test_notification_checks(producer, consumer):
    request = _subscribe(producer, consumer)
    notification = nodes.producer_notify(producer, '/temp', request.token)
    with pytest.raises(UnknownToken):
        nodes.consumer_accept_notification(consumer, replace(notification, token=b'\xee'))
    with pytest.raises(Malformed):
        nodes.consumer_accept_notification(consumer, replace(notification, options=()))
    with pytest.raises(UnknownPath):
        nodes.producer_notify(producer, '/nothing', request.token)

    rejected = CoapMessage(MessageType.NON, Code.NOT_FOUND, 9, request.token)
    with pytest.raises(RequestRejected):
        nodes.consumer_accept_notification(consumer, rejected)
    assert request.token not in consumer.subscriptions


def test_deregistration(producer, consumer):
    request = _subscribe(producer, consumer)
    cancel = nodes.consumer_unsubscribe(consumer, request.token, message_id=501)
    assert cancel.token == request.token
    assert coap_core.parse_observe(cancel) == coap_core.OBSERVE_DEREGISTER
    response = nodes.producer_handle(producer, cancel, peer='cons-01', now=1.0)
    assert nodes.consumer_accept_response(consumer, cancel, response) == PAYLOAD
    assert producer.observers['/temp'] == {}
    assert nodes.producer_notifications(producer, '/temp') == []
    with pytest.raises(UnknownToken):
        nodes.consumer_unsubscribe(consumer, request.token)


# ---------------------------------------------------------------------------
# Authorization Server

def test_grant_releases_secret_and_certificate(authz, secret, certificate):
    principal = nodes.authz_authenticate(authz, 'cons-01', 'hunter2')
    assert principal.granted_paths == ('/temp',)
    secrets, certificates = nodes.authz_grant(authz, principal, '/temp')
    assert secrets == [secret]
    assert certificates == [certificate]


def test_grant_refuses_ungranted_scope(authz):
    principal = nodes.authz_authenticate(authz, 'cons-01', 'hunter2')
    with pytest.raises(NotAuthorized):
        nodes.authz_grant(authz, principal, '/actuate')


def test_authentication_required(authz):
    with pytest.raises(NotAuthorized):
        nodes.authz_authenticate(authz, 'cons-01', 'wrong')
    with pytest.raises(NotAuthorized):
        nodes.authz_authenticate(authz, 'nobody', 'hunter2')
    with pytest.raises(NotAuthorized):
        nodes.authz_grant(authz, 'cons-01', '/temp')


def test_grant_after_rotation_returns_newest_epoch(authz):
    nodes.authz_rotate_secret(authz, 7)
    rotated, obj = nodes.authz_rotate_secret(authz, 7)
    assert rotated.epoch == 5
    assert keymat.read_rotation(obj) == rotated
    principal = nodes.authz_authenticate(authz, 'cons-01', 'hunter2')
    secrets, _ = nodes.authz_grant(authz, principal, ['/temp'])
    assert [(s.key_id, s.epoch) for s in secrets] == [(7, 5)]


def test_register_secret_rules(authz):
    with pytest.raises(ValueError):
        nodes.authz_register_secret(authz, keymat.AccessSecret(7, b'\x05' * 16, ('/temp',), 3))
    with pytest.raises(OscarError):
        nodes.authz_register_secret(authz, keymat.AccessSecret(8, b'\x05' * 16, ('/temp',), 0))
    with pytest.raises(NoSecret):
        nodes.authz_rotate_secret(authz, 99)


def test_grant_without_secret(authz):
    nodes.authz_register_principal(authz, 'cons-02', 'pw', scope=['/door'])
    principal = nodes.authz_authenticate(authz, 'cons-02', 'pw')
    with pytest.raises(NoSecret):
        nodes.authz_grant(authz, principal, '/door')


def test_fetch_certificate(authz, certificate):
    assert nodes.authz_fetch_certificate(authz, 'prod-01') == certificate
    assert nodes.authz_fetch_certificate(authz, 'prod-99') is None


def test_full_flow_through_authorization_server(authz, producer, anchor_key):
    consumer = nodes.ConsumerState('cons-01', certificate_source=lambda s: nodes.authz_fetch_certificate(authz, s))
    consumer.trust.add_anchor(anchor_key.public_key())
    principal = nodes.authz_authenticate(authz, 'cons-01', 'hunter2')
    nodes.consumer_obtain_grant(consumer, authz, principal, '/temp')
    request = nodes.consumer_request(consumer, '/temp')
    assert nodes.consumer_accept_response(consumer, request, nodes.producer_handle(producer, request)) == PAYLOAD
