"""
Loopback datagram driver: serves a producer on a UDP socket in a background
thread and lets a consumer exchange Confirmable requests with it.
"""

import logging
import socket
import threading
import time

import coap_core
import nodes
from exceptions import IoError, Malformed

MAX_DATAGRAM = 4096


class LoopbackProducer:
    """UDP endpoint on 127.0.0.1 dispatching to the producer state machine."""

    def __init__(self, state, host='127.0.0.1', port=0, tamper=None):
        self.state = state
        self.tamper = tamper
        self.logger = logging.getLogger('LoopbackProducer')
        self._stop = threading.Event()
        self._lock = threading.Lock()
        try:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sock.bind((host, port))
            self.sock.settimeout(0.1)
        except OSError as e:
            raise IoError(f"cannot bind UDP socket on {host}:{port}: {e}") from e
        self.address = self.sock.getsockname()
        self._thread = threading.Thread(target=self._serve, name='loopback-producer', daemon=True)

    def __enter__(self):
        self._thread.start()
        self.logger.info(f"Producer {self.state.sender_id} listening on {self.address[0]}:{self.address[1]}")
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join(timeout=2)
        self.sock.close()

    def _serve(self):
        while not self._stop.is_set():
            try:
                data, peer = self.sock.recvfrom(MAX_DATAGRAM)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                request = coap_core.decode_coap(data)
            except Malformed as e:
                self.logger.warning(f"Dropped malformed datagram from {peer}: {e}")
                continue
            with self._lock:
                response = nodes.producer_handle(self.state, request, peer=peer, now=time.monotonic())
            out = coap_core.encode_coap(response)
            if self.tamper is not None:
                out = self.tamper(out)
            self.sock.sendto(out, peer)


class LoopbackClient:
    """Client socket with Confirmable retransmission."""

    def __init__(self, server_address, policy=None, time_scale=0.25):
        self.server_address = server_address
        self.policy = policy or nodes.RetransmitPolicy()
        self.time_scale = time_scale
        self.logger = logging.getLogger('LoopbackClient')
        try:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sock.bind(('127.0.0.1', 0))
        except OSError as e:
            raise IoError(f"cannot open client socket: {e}") from e

    def close(self):
        self.sock.close()

    def exchange(self, request):
        """Send `request`, retransmitting on timeout; returns the matching response."""
        data = coap_core.encode_coap(request)
        for attempt, timeout in enumerate(self.policy.timeouts()):
            self.sock.sendto(data, self.server_address)
            self.sock.settimeout(timeout * self.time_scale)
            try:
                while True:
                    reply, _ = self.sock.recvfrom(MAX_DATAGRAM)
                    response = coap_core.decode_coap(reply)
                    if response.message_id == request.message_id and response.token == request.token:
                        return response
            except socket.timeout:
                self.logger.info(f"No response to MessageID {request.message_id}, attempt {attempt + 1}")
        raise IoError(f"no response after {self.policy.max_attempts} attempts")
