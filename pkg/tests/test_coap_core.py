import itertools
import random

import pytest

import coap_core
from coap_core import Code, CoapMessage, MessageType
from exceptions import Malformed, TokenTooLong, TooManySuites

OPTION_NUMBERS = [1, 3, 4, 9, 11, 12, 14, 15, 17, 35, 60, 258, 1500, 65001]


def _random_message(rng):
    options = [(rng.choice(OPTION_NUMBERS), rng.randbytes(rng.choice([0, 1, 5, 12, 13, 40, 300])))
               for _ in range(rng.randint(0, 6))]
    return CoapMessage(
        rng.choice(list(MessageType)),
        rng.choice(list(Code)),
        rng.randrange(1 << 16),
        rng.randbytes(rng.randint(0, 8)),
        options,
        rng.randbytes(rng.choice([0, 1, 25, 200])),
    )


def test_minimal_get_is_four_bytes():
    data = coap_core.encode_coap(CoapMessage(MessageType.CON, Code.GET, 0))
    assert data == bytes([0x40, 0x01, 0x00, 0x00])


@pytest.mark.parametrize('count', [1000, pytest.param(100_000, marks=pytest.mark.slow)])
def test_random_messages_round_trip(count):
    rng = random.Random(5)
    for _ in range(count):
        msg = _random_message(rng)
        assert coap_core.decode_coap(coap_core.encode_coap(msg)) == msg.canonical()


def test_options_are_sorted_on_encode():
    msg = CoapMessage(MessageType.CON, Code.GET, 9, b'\x01',
                      [(coap_core.ACCEPT_CIPHER, b'\x01'), (coap_core.URI_PATH, b'temp')])
    decoded = coap_core.decode_coap(coap_core.encode_coap(msg))
    assert [number for number, _ in decoded.options] == [coap_core.URI_PATH, coap_core.ACCEPT_CIPHER]
    assert decoded.canonical() == decoded
    assert decoded.path == '/temp'


def test_accept_cipher_option_wire_form():
    msg = CoapMessage(MessageType.CON, Code.GET, 1, b'', [coap_core.make_accept_cipher_option([1])])
    data = coap_core.encode_coap(msg)
    # delta 65001 needs the two-byte extension: 65001 - 269 = 0xFCDC
    assert data[4:] == bytes([0xE1, 0xFC, 0xDC, 0x01])


def test_message_id_wraps():
    assert CoapMessage(MessageType.CON, Code.GET, (1 << 16) + 5).message_id == 5


def test_token_too_long():
    with pytest.raises(TokenTooLong):
        coap_core.encode_coap(CoapMessage(MessageType.CON, Code.GET, 1, b'\x00' * 9))


@pytest.mark.parametrize('data', [
    b'\x40\x01\x00',                      # short header
    b'\x40\x01\x00\x00\xff',              # payload marker without payload
    b'\x80\x01\x00\x00',                  # version 2
    b'\x44\x01\x00\x00\x01',              # truncated token
    b'\x40\x01\x00\x00\xb5te',            # truncated option value
    b'\x40\x01\x00\x00\xf0',              # reserved delta nibble
    b'\x40\x01\x00\x00\xd1',              # missing extended delta byte
])
def test_decode_rejects_bad_framing(data):
    with pytest.raises(Malformed):
        coap_core.decode_coap(data)


def test_unknown_critical_option_is_flagged():
    msg = CoapMessage(MessageType.CON, Code.GET, 3, b'', [(9, b'x'), (10, b'y'), (coap_core.URI_PATH, b'temp')])
    decoded = coap_core.decode_coap(coap_core.encode_coap(msg))
    assert decoded.unknown_critical_options() == [9]
    plain = CoapMessage(MessageType.CON, Code.GET, 3, b'', coap_core.uri_path_options('/temp') +
                        [coap_core.make_accept_cipher_option([1])])
    assert plain.unknown_critical_options() == []


def test_make_accept_cipher_option():
    assert coap_core.make_accept_cipher_option([1]) == (65001, b'\x01')
    assert coap_core.make_accept_cipher_option([2, 1]) == (65001, b'\x02\x01')
    with pytest.raises(TooManySuites):
        coap_core.make_accept_cipher_option(list(range(1, 10)))
    with pytest.raises(ValueError):
        coap_core.make_accept_cipher_option([])


def test_negotiation_matrix():
    universe = [1, 2, 3, 4]
    subsets = [list(c) for r in range(1, 5) for c in itertools.combinations(universe, r)]
    for offered in subsets:
        for ordering in (offered, list(reversed(offered))):
            for supported in subsets:
                chosen = coap_core.negotiate_suite(ordering, supported)
                common = [s for s in ordering if s in supported]
                assert chosen == (common[0] if common else None)


def test_negotiation_without_option_uses_server_default():
    assert coap_core.negotiate_suite(None, [3, 1]) == 3


def test_parse_accept_cipher():
    msg = CoapMessage(MessageType.CON, Code.GET, 1, b'', [coap_core.make_accept_cipher_option([3, 1])])
    assert coap_core.parse_accept_cipher(msg) == [3, 1]
    assert coap_core.parse_accept_cipher(CoapMessage(MessageType.CON, Code.GET, 1)) is None


def test_suite_registry():
    assert set(coap_core.SUITES) >= {1, 2, 3}
    assert coap_core.get_suite(3).tag_length == 16
    with pytest.raises(Malformed):
        coap_core.get_suite(200)


def test_duplicate_window():
    win = coap_core.DuplicateWindow()
    assert not coap_core.check_duplicate(win, 'a', 7, 0.0)
    assert coap_core.check_duplicate(win, 'a', 7, 1.0)
    assert not coap_core.check_duplicate(win, 'b', 7, 1.0)
    assert not coap_core.check_duplicate(win, 'a', 8, 1.0)


def test_duplicate_window_expires():
    win = coap_core.DuplicateWindow()
    assert not coap_core.check_duplicate(win, 'a', 7, 0.0)
    assert not coap_core.check_duplicate(win, 'a', 7, 248.0)


def test_duplicate_window_is_bounded():
    win = coap_core.DuplicateWindow()
    for message_id in range(100):
        coap_core.check_duplicate(win, 'a', message_id, float(message_id))
    assert win.entry_count() == 32
    assert not coap_core.check_duplicate(win, 'a', 0, 100.0)


def test_duplicate_window_forgets_silent_peers():
    win = coap_core.DuplicateWindow()
    for i in range(5000):
        coap_core.check_duplicate(win, f"peer-{i}", i, 0.0)
    assert win.peer_count() == 5000
    coap_core.check_duplicate(win, 'late', 1, 100_000.0)
    assert win.peer_count() == 1
    assert win.entry_count() == 1


def test_duplicate_window_keeps_recent_peers():
    win = coap_core.DuplicateWindow()
    coap_core.check_duplicate(win, 'a', 1, 0.0)
    coap_core.check_duplicate(win, 'b', 1, 100.0)
    coap_core.check_duplicate(win, 'a', 2, 200.0)
    coap_core.check_duplicate(win, 'c', 1, 360.0)
    assert list(win.rings) == ['a', 'c']
    assert coap_core.check_duplicate(win, 'a', 2, 361.0)


def test_duplicate_window_caches_response():
    win = coap_core.DuplicateWindow()
    coap_core.check_duplicate(win, 'a', 7, 0.0)
    win.remember_response('a', 7, b'reply')
    assert win.cached_response('a', 7, 1.0) == b'reply'
    assert win.cached_response('b', 7, 1.0) is None


def test_code_dotted():
    assert Code.CONTENT.dotted == '2.05'
    assert Code.NOT_ACCEPTABLE.dotted == '4.06'
    assert Code.GET.is_request and not Code.CHANGED.is_request
