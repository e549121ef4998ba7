import pytest
from cryptography.hazmat.primitives.asymmetric import ed25519

import keymat
import models
import nodes
import objsec

PAYLOAD = b'21.5C@2024-05-01T12:00Z..'
CERT_NOT_BEFORE = 0
CERT_NOT_AFTER = 2 ** 40


@pytest.fixture
def anchor_key():
    return ed25519.Ed25519PrivateKey.generate()


@pytest.fixture
def authority_key():
    return ed25519.Ed25519PrivateKey.generate()


@pytest.fixture
def producer_key():
    return ed25519.Ed25519PrivateKey.generate()


@pytest.fixture
def certificate(anchor_key, producer_key):
    payload = objsec.CertificatePayload(
        'prod-01', objsec.public_key_bytes(producer_key.public_key()),
        ('temperature-sensor',), 'building-7', CERT_NOT_BEFORE, CERT_NOT_AFTER)
    return objsec.issue_certificate(payload, anchor_key)


@pytest.fixture
def secret():
    return keymat.AccessSecret(7, bytes(range(16)), ('/temp',), 3)


@pytest.fixture
def producer(producer_key, certificate, authority_key, secret):
    state = nodes.ProducerState('prod-01', producer_key, certificate)
    state.trust.add_anchor(authority_key.public_key())
    nodes.producer_install_secret(state, secret)
    nodes.producer_add_resource(state, '/temp', PAYLOAD)
    return state


@pytest.fixture
def consumer(anchor_key, certificate, secret):
    state = nodes.ConsumerState('cons-01', policy=nodes.CapabilityPolicy({'/temp': 'temperature-sensor'}))
    state.trust.add_anchor(anchor_key.public_key())
    nodes.consumer_install_grant(state, [secret], [certificate])
    return state


@pytest.fixture
def authz(authority_key, certificate, secret):
    state = nodes.AuthzServerState('authz', authority_key, models.create_registry('sqlite://'))
    nodes.authz_register_secret(state, secret)
    nodes.authz_publish_certificate(state, certificate, served_paths=['/temp'])
    nodes.authz_register_principal(state, 'cons-01', 'hunter2', scope=['/temp'])
    return state
