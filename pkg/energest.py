"""
Energest-style energy estimation: accumulate the time each node component
spends per state, then multiply by voltage and per-state current draw.
"""

from dataclasses import dataclass

from exceptions import ConfigInvalid


@dataclass(frozen=True)
class EnergyModel:
    """Operating voltage (V) and current draw per state (mA)."""
    voltage_v: float = 2.8
    cpu_active: float = 6.0
    cpu_lpm: float = 0.0026
    radio_rx: float = 18.5
    radio_tx: float = 25.8
    radio_off: float = 0.0

    def __post_init__(self):
        if self.voltage_v <= 0:
            raise ConfigInvalid("energy.voltage_v must be positive")
        for name in ('cpu_active', 'cpu_lpm', 'radio_rx', 'radio_tx', 'radio_off'):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"energy.{name} must be non-negative")
        if self.radio_off > self.radio_rx:
            raise ConfigInvalid("energy.radio_off must not exceed energy.radio_rx")


@dataclass
class EnergestLedger:
    """Seconds per state for one node; cpu_lpm and radio_off are filled in by close()."""
    node: str = ''
    cpu_active: float = 0.0
    cpu_lpm: float = 0.0
    radio_rx: float = 0.0
    radio_tx: float = 0.0
    radio_off: float = 0.0
    duration: float = 0.0

    def charge_cpu(self, seconds):
        self.cpu_active += seconds

    def charge_rx(self, seconds):
        self.radio_rx += seconds

    def charge_tx(self, seconds, displace_rx=False):
        """Charge TX time; with displace_rx the time was already counted as listening."""
        self.radio_tx += seconds
        if displace_rx:
            self.radio_rx = max(0.0, self.radio_rx - seconds)

    def close(self, duration):
        # LPM is whatever the CPU did not spend active
        self.duration = duration
        self.cpu_active = min(self.cpu_active, duration)
        self.cpu_lpm = duration - self.cpu_active
        self.radio_off = max(0.0, duration - self.radio_rx - self.radio_tx)
        return self


@dataclass(frozen=True)
class EnergyBreakdown:
    """Joules per state."""
    cpu_active: float = 0.0
    cpu_lpm: float = 0.0
    radio_rx: float = 0.0
    radio_tx: float = 0.0
    radio_off: float = 0.0

    @property
    def cpu(self):
        return self.cpu_active + self.cpu_lpm

    @property
    def radio(self):
        return self.radio_rx + self.radio_tx + self.radio_off

    @property
    def total(self):
        return self.cpu + self.radio


def account_energy(ledger, model):
    """E = t * V * I per state, currents converted from mA."""
    scale = model.voltage_v / 1000.0
    return EnergyBreakdown(
        cpu_active=ledger.cpu_active * model.cpu_active * scale,
        cpu_lpm=ledger.cpu_lpm * model.cpu_lpm * scale,
        radio_rx=ledger.radio_rx * model.radio_rx * scale,
        radio_tx=ledger.radio_tx * model.radio_tx * scale,
        radio_off=ledger.radio_off * model.radio_off * scale,
    )
