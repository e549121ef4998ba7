"""
Scenario configuration: typed dataclasses, the gen16/gen32 hardware presets
and the TOML scenario-file loader.

A scenario file has one table per concern; every key is optional except
`scenario.preset`. Values are layered preset < file < command-line flags.

    [scenario]   preset, mode, n_clients, max_slots, beta_s, duration_s, rng_seed
    [workload]   requests_per_min, payload_bytes, n_resources, notify
    [mac]        kind, channel_check_hz, on_time_ms, strobe_tx_fraction,
                 beacon_interval_ms, superframe_ms, coordinator
    [energy]     voltage_v, cpu_active, cpu_lpm, radio_rx, radio_tx, radio_off   (mA)
    [cpu]        sign_time_s, verify_time_s, aead_time_s, prf_time_s, handshake_time_s
    [bytes]      signature_bytes, frame_overhead, max_frame, DTLS flight sizes
    [protocol]   retransmit_timeout_s, max_attempts, loss_probability
    [sweep]      client_counts, betas, seeds, jobs
    [demo]       producer_id, consumer_id, path, payload, capability, grant
"""

import logging
import tomllib
from dataclasses import dataclass, field, fields, replace
from enum import Enum

import radio
from energest import EnergyModel
from exceptions import ConfigInvalid, IoError

log = logging.getLogger('scenario')


class Mode(str, Enum):
    OSCAR = 'oscar'
    DTLS_PSK = 'dtls'


class MacKind(str, Enum):
    ASYNC_LPL = 'async_lpl'
    BEACON = 'beacon'


@dataclass(frozen=True)
class MacConfig:
    kind: MacKind = MacKind.ASYNC_LPL
    channel_check_hz: float = 8.0
    on_time_ms: float = 10.0
    strobe_tx_fraction: float = 1.0
    beacon_interval_ms: float = 122.88
    superframe_ms: float = 15.36
    coordinator: bool = True

    def params(self):
        if self.kind == MacKind.ASYNC_LPL:
            return radio.XmacParams(self.channel_check_hz, self.on_time_ms / 1000.0, self.strobe_tx_fraction)
        return radio.BeaconParams(self.beacon_interval_ms / 1000.0, self.superframe_ms / 1000.0)


@dataclass(frozen=True)
class WorkloadConfig:
    requests_per_min: float = 0.5
    payload_bytes: int = 25
    n_resources: int = 4
    notify: bool = False

    @property
    def mean_interarrival_s(self):
        return 60.0 / self.requests_per_min


@dataclass(frozen=True)
class CpuTimes:
    sign_time_s: float = 1.18
    verify_time_s: float = 2.38
    aead_time_s: float = 0.005
    prf_time_s: float = 0.001
    handshake_time_s: float = 0.6


@dataclass(frozen=True)
class ByteModel:
    signature_bytes: int = 40
    frame_overhead: int = radio.DEFAULT_FRAME_OVERHEAD
    max_frame: int = radio.DEFAULT_MAX_FRAME
    client_hello: int = 60
    hello_verify_request: int = 44
    client_hello_cookie: int = 76
    server_hello_flight: int = 80
    client_finished_flight: int = 62
    server_finished_flight: int = 40
    close_alert: int = 15
    record_overhead: int = 14


@dataclass(frozen=True)
class ProtocolConfig:
    retransmit_timeout_s: float = 2.0
    max_attempts: int = 4
    loss_probability: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    mode: Mode = Mode.OSCAR
    n_clients: int = 1
    max_slots: int = 3
    beta_s: float = 60.0
    duration_s: float = 10800.0
    rng_seed: int = 1
    preset: str = 'gen16'
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    mac: MacConfig = field(default_factory=MacConfig)
    energy: EnergyModel = field(default_factory=EnergyModel)
    cpu_times: CpuTimes = field(default_factory=CpuTimes)
    bytes: ByteModel = field(default_factory=ByteModel)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    def validate(self):
        """Raise ConfigInvalid naming the first offending field."""
        checks = [
            (self.n_clients >= 1, 'scenario.n_clients', 'must be at least 1'),
            (self.max_slots >= 1, 'scenario.max_slots', 'must be at least 1'),
            (self.beta_s > 0, 'scenario.beta_s', 'must be positive'),
            (self.duration_s > 0, 'scenario.duration_s', 'must be positive'),
            (self.rng_seed >= 0, 'scenario.rng_seed', 'must be non-negative'),
            (self.workload.requests_per_min > 0, 'workload.requests_per_min', 'must be positive'),
            (self.workload.payload_bytes >= 0, 'workload.payload_bytes', 'must be non-negative'),
            (self.workload.n_resources >= 1, 'workload.n_resources', 'must be at least 1'),
            (self.mac.channel_check_hz > 0, 'mac.channel_check_hz', 'must be positive'),
            (self.mac.on_time_ms > 0, 'mac.on_time_ms', 'must be positive'),
            (0.0 <= self.mac.strobe_tx_fraction <= 1.0, 'mac.strobe_tx_fraction', 'must lie in [0, 1]'),
            (0 < self.mac.superframe_ms <= self.mac.beacon_interval_ms, 'mac.superframe_ms',
             'must be positive and at most mac.beacon_interval_ms'),
            (self.bytes.max_frame > self.bytes.frame_overhead + radio.FRAGN_HEADER + 8, 'bytes.max_frame',
             'leaves no room for payload'),
            (self.protocol.retransmit_timeout_s > 0, 'protocol.retransmit_timeout_s', 'must be positive'),
            (self.protocol.max_attempts >= 1, 'protocol.max_attempts', 'must be at least 1'),
            (0.0 <= self.protocol.loss_probability < 1.0, 'protocol.loss_probability', 'must lie in [0, 1)'),
        ]
        for name in ('sign_time_s', 'verify_time_s', 'aead_time_s', 'prf_time_s', 'handshake_time_s'):
            checks.append((getattr(self.cpu_times, name) >= 0, f'cpu.{name}', 'must be non-negative'))
        for ok, name, problem in checks:
            if not ok:
                raise ConfigInvalid(f"{name}: {problem}")
        return self

    @property
    def ratio(self):
        return self.n_clients / self.max_slots

    def with_changes(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class SweepConfig:
    client_counts: tuple = (3, 4, 6, 8, 12, 16)
    betas: tuple = (60.0,)
    seeds: int = 5
    jobs: int = 1


@dataclass(frozen=True)
class DemoConfig:
    producer_id: str = 'prod-01'
    consumer_id: str = 'cons-01'
    path: str = '/temp'
    payload: str = '21.5C@2024-05-01T12:00Z..'
    capability: str = 'temperature-sensor'
    grant: tuple = ('/temp',)


@dataclass(frozen=True)
class ScenarioFile:
    scenario: ScenarioConfig
    sweep: SweepConfig
    demo: DemoConfig


# ---------------------------------------------------------------------------
# Presets (representative data-sheet class values, not measurements)

PRESETS = {
    'gen16': {
        'mac': {'kind': 'async_lpl'},
        'energy': {'voltage_v': 2.8, 'cpu_active': 6.0, 'cpu_lpm': 0.0026, 'radio_rx': 18.5, 'radio_tx': 25.8},
        'cpu': {'sign_time_s': 1.18, 'verify_time_s': 2.38, 'aead_time_s': 0.005, 'prf_time_s': 0.001,
                'handshake_time_s': 0.6},
    },
    'gen32': {
        'mac': {'kind': 'beacon'},
        'energy': {'voltage_v': 2.8, 'cpu_active': 7.8, 'cpu_lpm': 0.004, 'radio_rx': 5.0, 'radio_tx': 6.0},
        'cpu': {'sign_time_s': 0.30, 'verify_time_s': 0.60, 'aead_time_s': 0.005, 'prf_time_s': 0.001,
                'handshake_time_s': 0.15},
    },
}

_SCENARIO_KEYS = {'mode', 'n_clients', 'max_slots', 'beta_s', 'duration_s', 'rng_seed', 'preset'}
_TABLES = {
    'workload': WorkloadConfig,
    'mac': MacConfig,
    'energy': EnergyModel,
    'cpu': CpuTimes,
    'bytes': ByteModel,
    'protocol': ProtocolConfig,
    'sweep': SweepConfig,
    'demo': DemoConfig,
}
_NESTED = {'workload': 'workload', 'mac': 'mac', 'energy': 'energy', 'cpu': 'cpu_times',
           'bytes': 'bytes', 'protocol': 'protocol'}


def _coerce(table, key, value, default):
    name = f"{table}.{key}"
    if isinstance(default, Enum):
        try:
            return type(default)(value)
        except ValueError:
            allowed = ', '.join(m.value for m in type(default))
            raise ConfigInvalid(f"{name}: {value!r} is not one of {allowed}") from None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigInvalid(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigInvalid(f"{name}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigInvalid(f"{name}: expected a string, got {value!r}")
        return value
    return value


def _defaults(cls):
    instance = cls()
    return {f.name: getattr(instance, f.name) for f in fields(cls)}


def _apply(table, base, values):
    merged = dict(base)
    for key, value in values.items():
        if key not in merged:
            raise ConfigInvalid(f"{table}.{key}: unknown key")
        merged[key] = _coerce(table, key, value, merged[key])
    return merged


def build_scenario(data=None, overrides=None):
    """
    Layer preset, file tables and flag overrides into a validated ScenarioFile.

    Args:
        data: parsed TOML tables (dict of dicts)
        overrides: dict of table -> {key: value} from the command line

    Returns:
        ScenarioFile
    """
    data = dict(data or {})
    overrides = overrides or {}
    unknown = set(data) - set(_TABLES) - {'scenario'}
    if unknown:
        raise ConfigInvalid(f"{sorted(unknown)[0]}: unknown table")
    for table, values in data.items():
        if not isinstance(values, dict):
            raise ConfigInvalid(f"{table}: expected a table")

    top = {k: v for k, v in _defaults(ScenarioConfig).items() if k in _SCENARIO_KEYS}
    top = _apply('scenario', top, data.get('scenario', {}))
    top = _apply('scenario', top, overrides.get('scenario', {}))
    preset_name = top['preset']
    if preset_name not in PRESETS:
        raise ConfigInvalid(f"scenario.preset: {preset_name!r} is not one of {', '.join(PRESETS)}")
    preset = PRESETS[preset_name]

    built = {}
    for table, cls in _TABLES.items():
        values = _apply(table, _defaults(cls), preset.get(table, {}))
        values = _apply(table, values, data.get(table, {}))
        values = _apply(table, values, overrides.get(table, {}))
        built[table] = cls(**values)

    nested = {attr: built[table] for table, attr in _NESTED.items()}
    scenario = ScenarioConfig(**top, **nested).validate()
    sweep = built['sweep']
    if not sweep.client_counts or any(not isinstance(n, int) or n < 1 for n in sweep.client_counts):
        raise ConfigInvalid("sweep.client_counts: expected a non-empty list of positive integers")
    if sweep.seeds < 1 or sweep.jobs < 1:
        raise ConfigInvalid("sweep.seeds and sweep.jobs must be at least 1")
    return ScenarioFile(scenario, sweep, built['demo'])


def parse_scenario_text(text, overrides=None, source='<string>'):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigInvalid(f"{source}: {e}") from e
    if 'preset' not in data.get('scenario', {}):
        raise ConfigInvalid(f"{source}: scenario.preset: missing mandatory field")
    return build_scenario(data, overrides)


def load_scenario(path, overrides=None):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise IoError(f"cannot read scenario file {path}: {e}") from e
    scenario_file = parse_scenario_text(text, overrides, source=str(path))
    log.info(f"Loaded scenario {path} (preset {scenario_file.scenario.preset}, "
             f"mode {scenario_file.scenario.mode.value})")
    return scenario_file


def preset_scenario(preset='gen16', **scenario_values):
    """ScenarioConfig built from a preset alone, with optional [scenario] values."""
    return build_scenario(overrides={'scenario': {'preset': preset, **scenario_values}}).scenario
