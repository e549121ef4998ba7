"""
Discrete-event simulation of a constrained CoAP server in a single-hop star
network, comparing OSCAR object security against a DTLS-PSK baseline with a
fixed number of session slots.

The real protocol state machines from `nodes` run inside the simulation; the
simulator adds time (simpy), radio duty cycling (`radio`), CPU-time charges
from the scenario and Energest accounting (`energest`).
"""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import simpy
from cryptography.hazmat.primitives.asymmetric import ed25519
from scipy import stats

import coap_core
import keymat
import nodes
import objsec
import radio
from energest import EnergestLedger, EnergyBreakdown, account_energy
from exceptions import ConfigInvalid, IoError, OscarError
from scenario import MacKind, Mode

CSV_COLUMNS = [
    'mode', 'n_clients', 'max_slots', 'beta_s', 'seed',
    'server_total_j', 'server_cpu_j', 'server_radio_j', 'client_mean_j_per_req',
    'latency_mean_s', 'latency_p95_s',
    'handshakes', 'evictions', 'signatures', 'verifications',
]
SUMMARY_COLUMNS = [
    'n_clients', 'ratio', 'oscar_server_j', 'oscar_ci_j', 'dtls_server_j', 'dtls_ci_j',
    'oscar_latency_s', 'dtls_latency_s',
]

SERVER = 'server'
COORDINATOR = 'coordinator'
CERTIFICATE_CHECK_TIME = 1
MAX_SESSION_ATTEMPTS = 4


@dataclass
class MetricsReport:
    mode: str
    n_clients: int
    max_slots: int
    beta_s: float
    seed: int
    server: EnergyBreakdown
    node_energy: dict
    client_mean_j_per_req: float
    latencies: list
    handshakes: int = 0
    evictions: int = 0
    retransmissions: int = 0
    signatures: int = 0
    verifications: int = 0
    requests_issued: int = 0
    requests_completed: int = 0
    notifications: int = 0
    mean_interarrival_s: float = 0.0
    ledgers: dict = field(default_factory=dict)

    @property
    def server_total_j(self):
        return self.server.total

    @property
    def latency_mean_s(self):
        return float(np.mean(self.latencies)) if self.latencies else 0.0

    @property
    def latency_p95_s(self):
        return float(np.percentile(self.latencies, 95)) if self.latencies else 0.0

    def to_row(self):
        return {
            'mode': self.mode,
            'n_clients': self.n_clients,
            'max_slots': self.max_slots,
            'beta_s': self.beta_s,
            'seed': self.seed,
            'server_total_j': round(self.server.total, 6),
            'server_cpu_j': round(self.server.cpu, 6),
            'server_radio_j': round(self.server.radio, 6),
            'client_mean_j_per_req': round(self.client_mean_j_per_req, 9),
            'latency_mean_s': round(self.latency_mean_s, 6),
            'latency_p95_s': round(self.latency_p95_s, 6),
            'handshakes': self.handshakes,
            'evictions': self.evictions,
            'signatures': self.signatures,
            'verifications': self.verifications,
        }


class SimNode:
    def __init__(self, env, name):
        self.name = name
        self.ledger = EnergestLedger(name)
        self.activity = EnergestLedger(name)  # traffic and CPU only, no idle listening
        self.cpu = simpy.Resource(env, capacity=1)
        self.radio = simpy.Resource(env, capacity=1)
        self.lock = simpy.Resource(env, capacity=1)


def _representation(path, version, size):
    text = f"{path}#{version}".encode('utf-8')
    return (text * (size // max(len(text), 1) + 1))[:size]


class Simulation:
    def __init__(self, cfg):
        self.cfg = cfg
        self.env = simpy.Environment()
        self.logger = logging.getLogger('Simulation')
        streams = np.random.SeedSequence(cfg.rng_seed).spawn(5)
        self.workload_seq, mac_seq, loss_seq, resign_seq, path_seq = streams
        self.mac_rng = np.random.default_rng(mac_seq)
        self.loss_rng = np.random.default_rng(loss_seq)
        self.resign_rng = np.random.default_rng(resign_seq)
        self.path_rng = np.random.default_rng(path_seq)

        params = cfg.mac.params()
        if cfg.mac.kind == MacKind.ASYNC_LPL:
            self.mac_state = radio.XmacState(params, self.mac_rng)
            self.mac = radio.mac_async_lpl
            self.coordinator = False
        else:
            self.mac_state = radio.BeaconState(params, self.mac_rng)
            self.mac = radio.mac_beacon_enabled
            self.coordinator = cfg.mac.coordinator
        self.idle_fraction = radio.idle_rx_fraction(params)

        self.client_names = [f"client-{i:02d}" for i in range(1, cfg.n_clients + 1)]
        names = [SERVER] + self.client_names + ([COORDINATOR] if self.coordinator else [])
        self.nodes = {name: SimNode(self.env, name) for name in names}
        for node in self.nodes.values():
            node.ledger.charge_rx(cfg.duration_s * self.idle_fraction)
            if isinstance(self.mac_state, radio.XmacState):
                self.mac_state.register(node.name)

        self.retransmit = nodes.RetransmitPolicy(cfg.protocol.retransmit_timeout_s, cfg.protocol.max_attempts)
        self.paths = [f"/r{i}" for i in range(cfg.workload.n_resources)]
        self.latencies = []
        self.arrivals = {}
        self.handshakes = 0
        self.evictions = 0
        self.retransmissions = 0
        self.signatures = 0
        self.issued = 0
        self.notifications = 0
        self.resign = nodes.ResignConfig(cfg.beta_s, cfg.workload.n_resources)
        self.observed = {}
        if cfg.workload.notify:
            for name in self.client_names:
                self.observed[name] = self.paths[int(self.path_rng.integers(len(self.paths)))]

        if cfg.mode == Mode.OSCAR:
            self._setup_oscar()
        else:
            self.table = nodes.DtlsSessionTable(cfg.max_slots)
            self.sessions = {name: False for name in self.client_names}

    # -- provisioning ------------------------------------------------------

    def _setup_oscar(self):
        cfg = self.cfg
        anchor_key = ed25519.Ed25519PrivateKey.generate()
        authority_key = ed25519.Ed25519PrivateKey.generate()
        producer_key = ed25519.Ed25519PrivateKey.generate()
        certificate = objsec.issue_certificate(
            objsec.CertificatePayload(SERVER, objsec.public_key_bytes(producer_key.public_key()),
                                      ('sensor',), None, 0, 2 ** 40),
            anchor_key)
        secret = keymat.AccessSecret(1, keymat.generate_secret(), tuple(self.paths), 0)

        self.producer = nodes.ProducerState(SERVER, producer_key, certificate, resign=self.resign)
        self.producer.trust.add_anchor(authority_key.public_key())
        nodes.producer_install_secret(self.producer, secret)
        for path in self.paths:
            nodes.producer_add_resource(self.producer, path, _representation(path, 0, cfg.workload.payload_bytes))
        self.producer.signatures = 0

        suite = coap_core.get_suite(coap_core.suite_for_key(producer_key))
        self.signature_saving = suite.signature_length - cfg.bytes.signature_bytes
        self.consumers = {}
        for name in self.client_names:
            consumer = nodes.ConsumerState(name)
            consumer.trust.add_anchor(anchor_key.public_key())
            nodes.consumer_install_grant(consumer, [secret], [certificate])
            consumer.policy = nodes.CapabilityPolicy({'/': 'sensor'})
            self.consumers[name] = consumer
            # authenticated channel to the Authorization Server, charged like one PSK handshake
            self._charge_channel_setup(self.nodes[name])
            if name in self.observed:
                self._register_observer(name, self.observed[name])

    def _register_observer(self, client, path):
        # registration rides on the provisioning exchange; its radio time is not charged
        consumer = self.consumers[client]
        request = nodes.consumer_subscribe(consumer, path)
        response = nodes.producer_handle_get(self.producer, request, peer=client, now=0.0)
        nodes.consumer_accept_response(consumer, request, response, now=CERTIFICATE_CHECK_TIME)
        consumer.verifications = 0

    def _charge_channel_setup(self, node):
        b = self.cfg.bytes
        sent = [b.client_hello, b.client_hello_cookie, b.client_finished_flight]
        received = [b.hello_verify_request, b.server_hello_flight, b.server_finished_flight]
        tx = sum(radio.airtime(s + b.frame_overhead) for s in sent)
        rx = sum(radio.airtime(s + b.frame_overhead) for s in received)
        for ledger in (node.ledger, node.activity):
            ledger.charge_cpu(self.cfg.cpu_times.handshake_time_s)
            ledger.charge_tx(tx)
            ledger.charge_rx(rx)

    # -- radio and CPU -----------------------------------------------------

    def _charge(self, outcome):
        for name, charge in outcome.charges.items():
            node = self.nodes[name]
            node.ledger.charge_tx(charge.tx, displace_rx=charge.displace_rx)
            node.ledger.charge_rx(charge.rx)
            node.activity.charge_tx(charge.tx)
            node.activity.charge_rx(charge.rx)

    def _route(self, src, dst):
        if self.coordinator:
            return [(src, COORDINATOR), (COORDINATOR, dst)]
        return [(src, dst)]

    def _hop(self, src, dst, nbytes):
        frames = radio.fragment_sizes(nbytes, self.cfg.bytes.frame_overhead, self.cfg.bytes.max_frame)
        loss = self.cfg.protocol.loss_probability
        with self.nodes[src].radio.request() as req:
            yield req
            for size in frames:
                outcome = self.mac(radio.Frame(src, dst, size), self.mac_state, self.env.now)
                self._charge(outcome)
                yield self.env.timeout(max(0.0, outcome.delivery - self.env.now))
                if loss > 0 and self.loss_rng.random() < loss:
                    self.logger.debug(f"{self.env.now:.3f}: frame {src}->{dst} lost")
                    return False
        return True

    def _deliver(self, src, dst, nbytes):
        for a, b in self._route(src, dst):
            delivered = yield from self._hop(a, b, nbytes)
            if not delivered:
                return False
        return True

    def _cpu(self, name, seconds):
        if seconds <= 0:
            return
        node = self.nodes[name]
        with node.cpu.request() as req:
            yield req
            node.ledger.charge_cpu(seconds)
            node.activity.charge_cpu(seconds)
            yield self.env.timeout(seconds)

    def _round_trip(self, client, up_bytes, serve):
        """
        Confirmable exchange: send, let the server run `serve`, send its reply
        back. Retransmits on loss; returns serve()'s marker or None.
        """
        for attempt, timeout in enumerate(self.retransmit.timeouts()):
            if attempt:
                self.retransmissions += 1
            if (yield from self._deliver(client, SERVER, up_bytes)):
                reply_bytes, marker = yield from serve()
                if reply_bytes is None:
                    return marker
                if (yield from self._deliver(SERVER, client, reply_bytes)):
                    return marker
            yield self.env.timeout(timeout)
        return None

    # -- workload ----------------------------------------------------------

    def _schedule_clients(self):
        mean = self.cfg.workload.mean_interarrival_s
        client_seeds = self.workload_seq.spawn(len(self.client_names))
        for name, seed in zip(self.client_names, client_seeds):
            rng = np.random.default_rng(seed)
            t, times = 0.0, []
            while True:
                t += float(rng.exponential(mean))
                if t >= self.cfg.duration_s:
                    break
                times.append(t)
            self.arrivals[name] = times
            for at in times:
                self.env.process(self._request(name, at))

    def _request(self, client, at):
        yield self.env.timeout(at - self.env.now)
        self.issued += 1
        node = self.nodes[client]
        with node.lock.request() as req:
            yield req
            if self.cfg.mode == Mode.OSCAR:
                done = yield from self._oscar_request(client)
            else:
                done = yield from self._dtls_request(client)
        if done:
            self.latencies.append(self.env.now - at)

    # -- OSCAR ---------------------------------------------------------------

    def _oscar_request(self, client):
        consumer = self.consumers[client]
        path = self.paths[int(self.path_rng.integers(len(self.paths)))]
        request = nodes.consumer_request(consumer, path, now=self.env.now)
        up_bytes = len(coap_core.encode_coap(request))
        cpu = self.cfg.cpu_times
        exchange = {}

        def serve():
            duplicate = self.producer.duplicates.cached_response(client, request.message_id, self.env.now)
            if duplicate is None:
                yield from self._cpu(SERVER, cpu.prf_time_s + cpu.aead_time_s)
            response = nodes.producer_handle_get(self.producer, request, peer=client, now=self.env.now)
            exchange['response'] = response
            return len(coap_core.encode_coap(response)) - self.signature_saving, 'ok'

        marker = yield from self._round_trip(client, up_bytes, serve)
        if marker is None:
            consumer.pending.pop(request.token, None)
            return False
        yield from self._cpu(client, cpu.prf_time_s + cpu.aead_time_s + cpu.verify_time_s)
        try:
            nodes.consumer_accept_response(consumer, request, exchange['response'], now=CERTIFICATE_CHECK_TIME)
        except OscarError as e:
            self.logger.warning(f"{client}: response rejected: {e}")
            return False
        return True

    def _updater(self, path):
        """New representation of `path` every beta_s * n_resources seconds; re-signed under OSCAR."""
        period = self.resign.update_interval_s
        next_at = float(self.resign_rng.uniform(0.0, period))
        version = 0
        while next_at < self.cfg.duration_s:
            yield self.env.timeout(max(0.0, next_at - self.env.now))
            version += 1
            if self.cfg.mode == Mode.OSCAR:
                self.signatures += 1
                yield from self._cpu(SERVER, self.cfg.cpu_times.sign_time_s)
                nodes.producer_refresh_resource(
                    self.producer, path, _representation(path, version, self.cfg.workload.payload_bytes),
                    self.env.now)
            if self.cfg.workload.notify:
                self._push(path)
            next_at += period

    def _push(self, path):
        if self.cfg.mode == Mode.OSCAR:
            for client, notification in nodes.producer_notifications(self.producer, path):
                self.env.process(self._oscar_notify(client, notification))
        else:
            for client, observed in self.observed.items():
                if observed == path:
                    self.env.process(self._dtls_notify(client))

    def _oscar_notify(self, client, notification):
        cpu = self.cfg.cpu_times
        yield from self._cpu(SERVER, cpu.prf_time_s + cpu.aead_time_s)
        nbytes = len(coap_core.encode_coap(notification)) - self.signature_saving
        # Non-confirmable: a lost notification is not repeated
        if not (yield from self._deliver(SERVER, client, nbytes)):
            return
        yield from self._cpu(client, cpu.prf_time_s + cpu.aead_time_s + cpu.verify_time_s)
        try:
            nodes.consumer_accept_notification(self.consumers[client], notification, now=CERTIFICATE_CHECK_TIME)
        except OscarError as e:
            self.logger.warning(f"{client}: notification rejected: {e}")
            return
        self.notifications += 1
    # -- DTLS-PSK baseline -------------------------------------------------

    def _dtls_step(self, event):
        actions, self.table = nodes.dtls_baseline_handle(self.table, event)
        for action in actions:
            if isinstance(action, nodes.CloseAlert) and action.peer != event.peer:
                self.evictions += 1
                self.env.process(self._send_alert(action.peer))
        return actions

    def _send_alert(self, peer):
        if (yield from self._deliver(SERVER, peer, self.cfg.bytes.close_alert)):
            self.sessions[peer] = False

    def _dtls_handshake(self, client):
        b, cpu = self.cfg.bytes, self.cfg.cpu_times
        state = {}

        def hello():
            yield from self._cpu(SERVER, cpu.prf_time_s)
            actions = self._dtls_step(nodes.ClientHello(client, self.env.now))
            state['cookie'] = next(a.cookie for a in actions if isinstance(a, nodes.HelloVerifyRequest))
            return b.hello_verify_request, 'cookie'

        def cookie_echo():
            actions = self._dtls_step(nodes.ClientHello(client, self.env.now, state['cookie']))
            if not any(isinstance(a, nodes.ServerHelloFlight) for a in actions):
                return None, 'dropped'
            yield from self._cpu(SERVER, cpu.handshake_time_s / 2)
            return b.server_hello_flight, 'hello'

        def finish():
            actions = self._dtls_step(nodes.HandshakeContinue(client, self.env.now))
            if not any(isinstance(a, nodes.ServerFinished) for a in actions):
                return b.close_alert, 'closed'
            yield from self._cpu(SERVER, cpu.handshake_time_s / 2)
            return b.server_finished_flight, 'ok'

        if (yield from self._round_trip(client, b.client_hello, hello)) != 'cookie':
            return 'lost'
        if (yield from self._round_trip(client, b.client_hello_cookie, cookie_echo)) != 'hello':
            return 'lost'
        yield from self._cpu(client, cpu.handshake_time_s)
        marker = yield from self._round_trip(client, b.client_finished_flight, finish)
        if marker == 'ok':
            self.handshakes += 1
            self.sessions[client] = True
        return marker or 'lost'

    def _dtls_response_bytes(self, observe=False):
        # header, 4-byte token, Observe when pushed, payload marker, payload, record
        observe_bytes = 4 if observe else 0
        return 4 + 4 + observe_bytes + 1 + self.cfg.workload.payload_bytes + self.cfg.bytes.record_overhead

    def _dtls_request(self, client):
        b, cpu = self.cfg.bytes, self.cfg.cpu_times
        path = self.paths[int(self.path_rng.integers(len(self.paths)))]
        get = coap_core.CoapMessage(coap_core.MessageType.CON, coap_core.Code.GET, 0, b'\x00' * 4,
                                    coap_core.uri_path_options(path))
        up_bytes = len(coap_core.encode_coap(get)) + b.record_overhead
        down_bytes = self._dtls_response_bytes()

        def serve():
            actions = self._dtls_step(nodes.AppData(client, self.env.now, up_bytes))
            if not any(isinstance(a, nodes.AppDataAccepted) for a in actions):
                return b.close_alert, 'closed'
            yield from self._cpu(SERVER, 2 * cpu.aead_time_s)
            return down_bytes, 'ok'

        for _ in range(MAX_SESSION_ATTEMPTS):
            if not self.sessions[client]:
                outcome = yield from self._dtls_handshake(client)
                if outcome == 'closed':
                    continue
                if outcome != 'ok':
                    return False
            marker = yield from self._round_trip(client, up_bytes, serve)
            if marker == 'ok':
                yield from self._cpu(client, cpu.aead_time_s)
                return True
            if marker != 'closed':
                return False
            self.sessions[client] = False
        return False

    def _dtls_notify(self, client):
        # pushed over an established session only; an evicted client has lost its observation
        if not self.sessions[client]:
            return
        actions = self._dtls_step(nodes.AppData(client, self.env.now))
        if not any(isinstance(a, nodes.AppDataAccepted) for a in actions):
            return
        cpu = self.cfg.cpu_times
        yield from self._cpu(SERVER, cpu.aead_time_s)
        if (yield from self._deliver(SERVER, client, self._dtls_response_bytes(observe=True))):
            yield from self._cpu(client, cpu.aead_time_s)
            self.notifications += 1

    # -- run -----------------------------------------------------------------

    def run(self):
        cfg = self.cfg
        self.logger.info(f"Running {cfg.mode.value} with {cfg.n_clients} client(s), beta {cfg.beta_s}s, "
                         f"{cfg.duration_s}s, seed {cfg.rng_seed}")
        self._schedule_clients()
        if cfg.mode == Mode.OSCAR or cfg.workload.notify:
            for path in self.paths:
                self.env.process(self._updater(path))
        self.env.run(until=cfg.duration_s)
        return self._report()

    def _report(self):
        cfg = self.cfg
        energy = {}
        ledgers = {}
        for name, node in self.nodes.items():
            ledgers[name] = node.ledger.close(cfg.duration_s)
            energy[name] = account_energy(node.ledger, cfg.energy)

        completed = len(self.latencies)
        client_activity = sum(account_energy(self.nodes[name].activity, cfg.energy).total
                              for name in self.client_names)
        gaps = [b - a for times in self.arrivals.values() for a, b in zip([0.0] + times, times)]
        verifications = sum(c.verifications for c in self.consumers.values()) if cfg.mode == Mode.OSCAR else 0

        report = MetricsReport(
            mode=cfg.mode.value,
            n_clients=cfg.n_clients,
            max_slots=cfg.max_slots,
            beta_s=cfg.beta_s,
            seed=cfg.rng_seed,
            server=energy[SERVER],
            node_energy=energy,
            client_mean_j_per_req=client_activity / completed if completed else 0.0,
            latencies=self.latencies,
            handshakes=self.handshakes,
            evictions=self.evictions,
            retransmissions=self.retransmissions,
            signatures=self.signatures,
            verifications=verifications,
            requests_issued=self.issued,
            requests_completed=completed,
            notifications=self.notifications,
            mean_interarrival_s=float(np.mean(gaps)) if gaps else 0.0,
            ledgers=ledgers,
        )
        self.logger.info(f"Finished {cfg.mode.value} n={cfg.n_clients}: server {report.server_total_j:.3f} J, "
                         f"{completed}/{self.issued} requests, {self.handshakes} handshakes, "
                         f"{self.signatures} signatures, {self.notifications} notifications")
        return report


def run_scenario(cfg):
    """Run one scenario; identical config and seed give an identical report."""
    cfg.validate()
    return Simulation(cfg).run()


def run_many(configs, jobs=1):
    configs = list(configs)
    for cfg in configs:
        cfg.validate()
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_scenario, configs))
    return [run_scenario(cfg) for cfg in configs]


# ---------------------------------------------------------------------------
# Sweeps

@dataclass(frozen=True)
class SweepPoint:
    n_clients: int
    ratio: float
    oscar_server_j: float
    oscar_ci_j: float
    dtls_server_j: float
    dtls_ci_j: float
    oscar_latency_s: float
    dtls_latency_s: float

    def to_row(self):
        return {name: (round(value, 6) if isinstance(value, float) else value)
                for name, value in zip(SUMMARY_COLUMNS, (
                    self.n_clients, self.ratio, self.oscar_server_j, self.oscar_ci_j,
                    self.dtls_server_j, self.dtls_ci_j, self.oscar_latency_s, self.dtls_latency_s))}


@dataclass
class SweepResult:
    points: list
    reports: list
    crossover: float = None


def mean_ci(values, confidence=0.95):
    """Mean and Student-t half-width of the confidence interval."""
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    if len(values) < 2:
        return mean, 0.0
    half = stats.t.ppf((1 + confidence) / 2, len(values) - 1) * values.std(ddof=1) / math.sqrt(len(values))
    return mean, float(half)


def find_crossover(ratios, oscar, dtls):
    """First ratio where OSCAR drops below DTLS, linearly interpolated; None if it never does."""
    diffs = [o - d for o, d in zip(oscar, dtls)]
    if not diffs:
        return None
    if diffs[0] < 0:
        return float(ratios[0])
    for i in range(len(diffs) - 1):
        if diffs[i] >= 0 > diffs[i + 1]:
            return float(ratios[i] + (ratios[i + 1] - ratios[i]) * diffs[i] / (diffs[i] - diffs[i + 1]))
    return None


def sweep_crossover(base, client_counts, seeds=5, jobs=1):
    """
    Paired OSCAR/DTLS runs per client count and seed.

    Args:
        base: ScenarioConfig whose mode and n_clients are replaced per run
        client_counts: client counts to evaluate
        seeds: runs per point, seeds base.rng_seed .. base.rng_seed + seeds - 1
        jobs: worker processes

    Returns:
        SweepResult with per-count means, 95% intervals and the crossover ratio
    """
    counts = sorted(set(client_counts))
    if not counts:
        raise ConfigInvalid("sweep.client_counts: must not be empty")
    configs = [base.with_changes(mode=mode, n_clients=n, rng_seed=base.rng_seed + k)
               for n in counts for mode in (Mode.OSCAR, Mode.DTLS_PSK) for k in range(seeds)]
    reports = run_many(configs, jobs)

    points = []
    for n in counts:
        oscar = [r for r in reports if r.n_clients == n and r.mode == Mode.OSCAR.value]
        dtls = [r for r in reports if r.n_clients == n and r.mode == Mode.DTLS_PSK.value]
        oscar_mean, oscar_ci = mean_ci([r.server_total_j for r in oscar])
        dtls_mean, dtls_ci = mean_ci([r.server_total_j for r in dtls])
        points.append(SweepPoint(
            n, n / base.max_slots, oscar_mean, oscar_ci, dtls_mean, dtls_ci,
            float(np.mean([r.latency_mean_s for r in oscar])), float(np.mean([r.latency_mean_s for r in dtls]))))

    crossover = find_crossover([p.ratio for p in points], [p.oscar_server_j for p in points],
                               [p.dtls_server_j for p in points])
    logging.getLogger('Simulation').info(
        f"Sweep over {counts} at beta {base.beta_s}s: crossover ratio {crossover}")
    return SweepResult(points, reports, crossover)


def write_csv(rows, path, fieldnames=CSV_COLUMNS):
    try:
        with open(path, 'w', newline='') as csvfile:
            writer = csv.DictWriter(csvfile, fieldnames=fieldnames)
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    logging.getLogger('Simulation').debug(f"Wrote {len(rows)} rows to {path}")
    return path
