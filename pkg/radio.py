"""
Radio duty-cycling models for an 802.15.4 star network at 250 kbps.

Both MAC functions take a frame, the shared MAC state and the current time and
return when the frame starts and is delivered, plus the TX/RX seconds to
charge to each node involved. Idle listening (channel checks, beacon tracking)
is not part of a frame's charges; see `idle_rx_fraction`.
"""

import math
from dataclasses import dataclass, field

import numpy as np

BITRATE_BPS = 250_000
PHY_OVERHEAD_BYTES = 6
ACK_FRAME_BYTES = 5
UNIT_BACKOFF_S = 0.00032
MAX_BACKOFF_UNITS = 8

DEFAULT_FRAME_OVERHEAD = 31
DEFAULT_MAX_FRAME = 127
FRAG1_HEADER = 4
FRAGN_HEADER = 5


def airtime(frame_bytes):
    """On-air seconds of one frame including the PHY header."""
    return (PHY_OVERHEAD_BYTES + frame_bytes) * 8 / BITRATE_BPS


def fragment_sizes(payload_bytes, frame_overhead=DEFAULT_FRAME_OVERHEAD, max_frame=DEFAULT_MAX_FRAME):
    """MAC frame sizes carrying `payload_bytes`; fragments carry multiples of 8 bytes except the last."""
    budget = max_frame - frame_overhead
    if payload_bytes <= budget:
        return [payload_bytes + frame_overhead]
    first = (budget - FRAG1_HEADER) // 8 * 8
    rest = (budget - FRAGN_HEADER) // 8 * 8
    if first <= 0 or rest <= 0:
        raise ValueError(f"frame budget {budget} too small to fragment")
    sizes = [frame_overhead + FRAG1_HEADER + first]
    remaining = payload_bytes - first
    while remaining > 0:
        chunk = min(rest, remaining)
        sizes.append(frame_overhead + FRAGN_HEADER + chunk)
        remaining -= chunk
    return sizes


@dataclass(frozen=True)
class Frame:
    sender: str
    receiver: str
    size: int


@dataclass(frozen=True)
class Charge:
    tx: float = 0.0
    rx: float = 0.0
    displace_rx: bool = False


@dataclass(frozen=True)
class MacOutcome:
    start: float
    delivery: float
    charges: dict
    access_delay: float = 0.0


# ---------------------------------------------------------------------------
# Asynchronous low-power listening (X-MAC)

@dataclass(frozen=True)
class XmacParams:
    channel_check_hz: float = 8.0
    on_time_s: float = 0.010
    strobe_tx_fraction: float = 1.0

    @property
    def check_interval_s(self):
        return 1.0 / self.channel_check_hz


@dataclass
class XmacState:
    params: XmacParams
    rng: np.random.Generator
    phases: dict = field(default_factory=dict)
    awake_until: dict = field(default_factory=dict)

    def register(self, node):
        if node not in self.phases:
            self.phases[node] = float(self.rng.uniform(0.0, self.params.check_interval_s))
        return self.phases[node]

    def next_wake(self, node, t):
        period = self.params.check_interval_s
        phase = self.register(node)
        return phase + math.ceil((t - phase) / period) * period

    def is_awake(self, node, t):
        return t < self.awake_until.get(node, -math.inf)

    def _hold(self, node, done):
        # stay listening for on_time after the exchange; returns the extra RX time
        held = self.awake_until.get(node, -math.inf)
        until = done + self.params.on_time_s
        extra = max(0.0, until - max(held, done))
        self.awake_until[node] = max(held, until)
        return extra


def mac_async_lpl(frame, state, now):
    """Strobe until the receiver's next channel check, unless it is still awake from a previous frame."""
    params = state.params
    if state.is_awake(frame.receiver, now):
        strobe = 0.0
    else:
        strobe = state.next_wake(frame.receiver, now) - now
    air = airtime(frame.size)
    ack = airtime(ACK_FRAME_BYTES)
    start = now + strobe
    delivery = start + air
    done = delivery + ack

    sender_hold = state._hold(frame.sender, done)
    receiver_hold = state._hold(frame.receiver, done)
    charges = {
        frame.sender: Charge(tx=strobe * params.strobe_tx_fraction + air,
                             rx=strobe * (1.0 - params.strobe_tx_fraction) + ack + sender_hold),
        frame.receiver: Charge(tx=ack, rx=air + receiver_hold),
    }
    return MacOutcome(start, delivery, charges, access_delay=strobe)


# ---------------------------------------------------------------------------
# Beacon-enabled 802.15.4

@dataclass(frozen=True)
class BeaconParams:
    beacon_interval_s: float = 0.12288
    superframe_s: float = 0.01536

    def __post_init__(self):
        if not 0 < self.superframe_s <= self.beacon_interval_s:
            raise ValueError("superframe duration must be positive and at most the beacon interval")


@dataclass
class BeaconState:
    params: BeaconParams
    rng: np.random.Generator


def beacon_mean_access_delay(params):
    """Mean wait for a uniformly arriving frame: send now inside the active portion, else at the next beacon."""
    bi, sd = params.beacon_interval_s, params.superframe_s
    return (bi - sd) ** 2 / (2 * bi)


def mac_beacon_enabled(frame, state, now):
    """Defer to the active portion of the superframe; listening there is idle cost already."""
    bi, sd = state.params.beacon_interval_s, state.params.superframe_s
    backoff = int(state.rng.integers(0, MAX_BACKOFF_UNITS)) * UNIT_BACKOFF_S
    air = airtime(frame.size)
    ack = airtime(ACK_FRAME_BYTES)
    cycle = math.floor(now / bi)
    offset = now - cycle * bi
    if offset + backoff + air + ack <= sd:
        start = now + backoff
    else:
        start = (cycle + 1) * bi + backoff
    delivery = start + air
    charges = {
        frame.sender: Charge(tx=air, displace_rx=True),
        frame.receiver: Charge(tx=ack, displace_rx=True),
    }
    return MacOutcome(start, delivery, charges, access_delay=start - now)


def idle_rx_fraction(mac):
    """Share of time a node listens with no traffic."""
    if isinstance(mac, XmacParams):
        return min(1.0, mac.on_time_s * mac.channel_check_hz)
    return mac.superframe_s / mac.beacon_interval_s
