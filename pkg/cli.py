#!/usr/bin/env python3
"""
OSCAR command line: key and certificate generation, access-secret issuance,
object inspection, the loopback demo and simulator runs.

Exit codes: 0 success, 1 a protocol or verification step failed,
2 usage error or invalid configuration, 3 file or socket error.
"""

import argparse
import csv
import logging
import os
import sys
import time

import coap_core
import driver
import keymat
import models
import nodes
import objsec
import sim
from exceptions import ConfigInvalid, IoError, OscarError, ValidityInverted
from scenario import DemoConfig, build_scenario, load_scenario

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

log = logging.getLogger('cli')


def configure_logging(verbose=False):
    level = 'DEBUG' if verbose else os.environ.get('OSCAR_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )


# ---------------------------------------------------------------------------
# Keys, certificates, secrets, inspection

def cmd_keygen(args):
    private_key = keymat.generate_keypair(args.suite)
    owner = args.owner or os.path.splitext(os.path.basename(args.out))[0]
    private_path, public_path = keymat.save_keypair(args.out, private_key, owner)
    print(f"wrote {private_path} and {public_path} (owner {owner}, suite {args.suite})")
    return EXIT_OK


def cmd_cert_issue(args):
    anchor = keymat.load_keypair(args.anchor)
    subject = keymat.load_public_key_file(args.subject_key)
    not_before = args.not_before if args.not_before is not None else int(time.time())
    not_after = args.not_after if args.not_after is not None else not_before + args.days * 86400
    payload = objsec.CertificatePayload(
        subject_id=args.subject or subject.owner_id,
        public_key=objsec.public_key_bytes(subject.public_key),
        capabilities=tuple(args.capability or ()),
        location=args.location,
        not_before=not_before,
        not_after=not_after,
    )
    cert = objsec.issue_certificate(payload, anchor.private_key, issuer_id=anchor.owner_id)
    _write(args.out, objsec.encode_object(cert))
    print(f"wrote certificate for {payload.subject_id} to {args.out}")
    return EXIT_OK


def cmd_secret_issue(args):
    authority = keymat.load_keypair(args.authority)
    secret_bytes = bytes.fromhex(args.secret_hex) if args.secret_hex else keymat.generate_secret(args.length)
    secret = keymat.AccessSecret(args.key_id, secret_bytes, tuple(args.scope), args.epoch)
    obj = objsec.sign_object(keymat.encode_access_secret(secret), authority.private_key,
                             authority.owner_id, key_id=secret.key_id)
    _write(args.out, objsec.encode_object(obj))
    print(f"wrote access secret key_id {secret.key_id} epoch {secret.epoch} for {list(secret.resource_scope)} "
          f"to {args.out}")
    return EXIT_OK


def _write(path, data):
    try:
        with open(path, 'wb') as f:
            f.write(data)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def describe_object(obj, indent=''):
    """Human-readable lines for a secure object, following nested annotations."""
    header = obj.header
    lines = [
        f"{indent}kind: {obj.kind.name}",
        f"{indent}suite: {header.cipher_suite_id} ({coap_core.get_suite(header.cipher_suite_id).name})",
        f"{indent}signer/sender: {header.signer_or_sender_id}",
        f"{indent}key_id: {header.key_id}",
    ]
    if header.binding_message_id is not None:
        lines.append(f"{indent}binding MessageID: {header.binding_message_id}")
    lines.append(f"{indent}body: {len(obj.body)} bytes, auth: {len(obj.auth)} bytes")

    if obj.kind == objsec.ObjectKind.CERTIFICATE:
        payload = objsec.certificate_payload(obj)
        lines += [
            f"{indent}subject: {payload.subject_id}",
            f"{indent}capabilities: {', '.join(payload.capabilities) or '-'}",
            f"{indent}location: {payload.location or '-'}",
            f"{indent}valid: {payload.not_before} .. {payload.not_after}",
        ]
    elif obj.body.startswith(keymat.ACCESS_SECRET_MARKER):
        secret = keymat.decode_access_secret(obj.body)
        lines += [
            f"{indent}access secret: key_id {secret.key_id}, epoch {secret.epoch}, {len(secret.secret)} bytes",
            f"{indent}scope: {', '.join(secret.resource_scope)}",
        ]
    elif obj.body.startswith(objsec.ANNOTATION_MARKER):
        annotation = objsec.read_annotation(obj)
        lines += [
            f"{indent}annotation timestamp: {annotation.timestamp}",
            f"{indent}annotation location: {annotation.location or '-'}",
            f"{indent}inner:",
        ]
        lines += describe_object(annotation.inner, indent + '  ')
    return lines


def cmd_inspect(args):
    data = keymat.read_file(args.file)
    if keymat.is_key_container(data):
        pair = keymat.decode_key_container(data)
        print(f"key file: owner {pair.owner_id}, suite {pair.suite_id}, "
              f"{'private+public' if pair.private_key is not None else 'public only'}")
        return EXIT_OK
    obj = objsec.decode_object(data)
    for line in describe_object(obj):
        print(line)
    if args.verify_with:
        public_key = keymat.load_public_key_file(args.verify_with).public_key
        ok = objsec.verify_object(obj, public_key)
        print(f"signature: {'valid' if ok else 'INVALID'}")
        return EXIT_OK if ok else EXIT_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# Demo

class DemoStepFailed(Exception):
    def __init__(self, step, error):
        self.step = step
        self.error = error
        super().__init__(f"{step}: {error}")


def _flip_payload_byte(data):
    msg = coap_core.decode_coap(data)
    if not msg.payload:
        return data
    payload = bytearray(msg.payload)
    payload[-1] ^= 0x01
    return coap_core.encode_coap(coap_core.CoapMessage(msg.type, msg.code, msg.message_id, msg.token,
                                                       msg.options, bytes(payload)))


def run_demo(demo, tamper=False, scope=None, emit=print):
    """
    Producer, consumer and Authorization Server over loopback UDP.

    Returns:
        the verified plaintext; raises DemoStepFailed naming the failing step
    """
    step = 'setup'
    try:
        anchor_key = keymat.generate_keypair()
        authority_key = keymat.generate_keypair()
        producer_key = keymat.generate_keypair()
        now = int(time.time())

        authz = nodes.AuthzServerState('authz', authority_key, models.create_registry())
        cert = objsec.issue_certificate(
            objsec.CertificatePayload(demo.producer_id, objsec.public_key_bytes(producer_key.public_key()),
                                      (demo.capability,), None, now - 60, now + 86400),
            anchor_key)
        nodes.authz_publish_certificate(authz, cert, served_paths=[demo.path])
        secret = nodes.authz_register_secret(
            authz, keymat.AccessSecret(1, keymat.generate_secret(), (demo.path,), 0))

        producer = nodes.ProducerState(demo.producer_id, producer_key, cert)
        producer.trust.add_anchor(authority_key.public_key())
        nodes.producer_install_secret(producer, secret)
        nodes.producer_add_resource(producer, demo.path, demo.payload.encode('utf-8'))

        credential = os.urandom(16).hex()
        nodes.authz_register_principal(authz, demo.consumer_id, credential, scope=demo.grant)
        consumer = nodes.ConsumerState(
            demo.consumer_id,
            policy=nodes.CapabilityPolicy({demo.path: demo.capability}),
            certificate_source=lambda subject: nodes.authz_fetch_certificate(authz, subject),
        )
        consumer.trust.add_anchor(anchor_key.public_key())
        emit(f"[setup] producer {demo.producer_id} serves {demo.path}; consumer {demo.consumer_id} "
             f"granted {', '.join(demo.grant)}")

        with driver.LoopbackProducer(producer, tamper=_flip_payload_byte if tamper else None) as server:
            client = driver.LoopbackClient(server.address)
            try:
                step = 'rotate'
                rotated, put_body = nodes.authz_rotate_secret(authz, secret.key_id)
                put = coap_core.CoapMessage(coap_core.MessageType.CON, coap_core.Code.PUT, 0x4000, b'\x52',
                                            coap_core.uri_path_options('/secret'),
                                            objsec.encode_object(put_body))
                reply = client.exchange(put)
                if reply.code != coap_core.Code.CHANGED:
                    raise OscarError(f"secret update answered {coap_core.Code(reply.code).dotted}")
                emit(f"[rotate] key_id {rotated.key_id} now at epoch {rotated.epoch} (2.04 Changed)")

                step = 'grant'
                principal = nodes.authz_authenticate(authz, demo.consumer_id, credential)
                secrets, _ = nodes.consumer_obtain_grant(consumer, authz, principal, scope or demo.path)
                emit(f"[grant] received key_id(s) {[s.key_id for s in secrets]} "
                     f"epoch(s) {[s.epoch for s in secrets]}")

                step = 'request'
                request = nodes.consumer_request(consumer, demo.path)
                emit(f"[request] GET {demo.path} MessageID {request.message_id} Accept-cipher {consumer.suites}")
                response = client.exchange(request)
                emit(f"[response] {coap_core.Code(response.code).dotted} with {len(response.payload)} "
                     f"byte encrypted object")

                step = 'verify'
                plaintext = nodes.consumer_accept_response(consumer, request, response)
                emit(f"[verify] signature of {demo.producer_id} valid; payload {plaintext!r}")
                return plaintext
            finally:
                client.close()
    except (OscarError, ValueError) as e:
        raise DemoStepFailed(step, e) from e


def cmd_demo(args):
    demo = DemoConfig()
    if args.config:
        demo = load_scenario(args.config).demo
    if args.grant:
        demo = DemoConfig(demo.producer_id, demo.consumer_id, demo.path, demo.payload, demo.capability,
                          tuple(args.grant))
    try:
        run_demo(demo, tamper=args.tamper, scope=args.scope)
    except DemoStepFailed as e:
        print(f"demo failed at step {e.step}: {e.error}")
        log.error(f"Demo failed at step {e.step}: {e.error}")
        return EXIT_FAILED
    print("demo complete: all steps verified")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Simulator

def _scenario_overrides(args):
    scenario = {}
    if args.preset:
        scenario['preset'] = args.preset
    if args.seed is not None:
        scenario['rng_seed'] = args.seed
    if getattr(args, 'mode', None):
        scenario['mode'] = args.mode
    if args.beta is not None:
        scenario['beta_s'] = args.beta
    return {'scenario': scenario}


def _load(args, overrides):
    if args.config:
        return load_scenario(args.config, overrides)
    overrides.setdefault('scenario', {}).setdefault('preset', 'gen16')
    return build_scenario(overrides=overrides)


def _emit_rows(rows, out, fieldnames=sim.CSV_COLUMNS):
    if out:
        return sim.write_csv(rows, out, fieldnames)
    writer = csv.DictWriter(sys.stdout, fieldnames=fieldnames)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return None


def cmd_sim_run(args):
    overrides = _scenario_overrides(args)
    if args.clients is not None:
        overrides['scenario']['n_clients'] = args.clients
    if args.notify:
        overrides['workload'] = {'notify': True}
    scenario = _load(args, overrides).scenario
    report = sim.run_scenario(scenario)
    _emit_rows([report.to_row()], args.out)
    print(f"{report.mode}: server {report.server_total_j:.3f} J, latency {report.latency_mean_s:.3f} s, "
          f"{report.requests_completed}/{report.requests_issued} requests, {report.notifications} notifications",
          file=sys.stderr)
    return EXIT_OK


def _client_list(text):
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ConfigInvalid(f"--clients: expected comma-separated integers, got {text!r}") from None


def cmd_sim_sweep(args):
    overrides = _scenario_overrides(args)
    sweep_overrides = {}
    if args.clients:
        sweep_overrides['client_counts'] = _client_list(args.clients)
    if args.beta is not None:
        sweep_overrides['betas'] = [args.beta]
    if args.seeds is not None:
        sweep_overrides['seeds'] = args.seeds
    if args.jobs is not None:
        sweep_overrides['jobs'] = args.jobs
    overrides['sweep'] = sweep_overrides
    loaded = _load(args, overrides)

    rows, summary = [], []
    for beta in loaded.sweep.betas:
        base = loaded.scenario.with_changes(beta_s=float(beta))
        result = sim.sweep_crossover(base, loaded.sweep.client_counts, loaded.sweep.seeds, loaded.sweep.jobs)
        rows += [report.to_row() for report in result.reports]
        summary += [point.to_row() for point in result.points]
        crossing = f"{result.crossover:.2f}" if result.crossover is not None else "none"
        print(f"beta {float(beta):g}s: crossover ratio {crossing}")
    _emit_rows(rows, args.out)
    if args.summary:
        sim.write_csv(summary, args.summary, sim.SUMMARY_COLUMNS)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog='oscar', description='Object security for constrained CoAP networks')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('keygen', help='generate a signature key pair')
    p.add_argument('--out', required=True, help='private key file; the public key goes to <out>.pub')
    p.add_argument('--owner', help='identity stored with the key (default: file name)')
    p.add_argument('--suite', type=int, default=coap_core.DEFAULT_SUITE, choices=sorted(coap_core.SUITES))
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser('cert-issue', help='issue a certificate signed by a trust anchor')
    p.add_argument('--anchor', required=True, help='trust-anchor private key file')
    p.add_argument('--subject-key', required=True, help='subject public key file')
    p.add_argument('--subject', help='subject id (default: owner of the subject key)')
    p.add_argument('--capability', action='append')
    p.add_argument('--location')
    p.add_argument('--not-before', type=int)
    p.add_argument('--not-after', type=int)
    p.add_argument('--days', type=int, default=365)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_cert_issue)

    p = sub.add_parser('secret-issue', help='issue an authority-signed access secret')
    p.add_argument('--authority', required=True, help='authority private key file')
    p.add_argument('--key-id', type=int, required=True)
    p.add_argument('--scope', action='append', required=True, help='resource path (repeatable)')
    p.add_argument('--epoch', type=int, default=0)
    p.add_argument('--length', type=int, default=keymat.MIN_SECRET_LENGTH)
    p.add_argument('--secret-hex')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_secret_issue)

    p = sub.add_parser('inspect', help='print an object or key file')
    p.add_argument('file')
    p.add_argument('--verify-with', help='public key file to check the signature against')
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser('demo', help='producer/consumer/authorization server over loopback UDP')
    p.add_argument('--config')
    p.add_argument('--tamper', action='store_true', help='flip a byte of every response payload')
    p.add_argument('--scope', help='path the consumer asks the authorization server for')
    p.add_argument('--grant', action='append', help='path granted to the consumer (repeatable)')
    p.set_defaults(func=cmd_demo)

    for name, func in (('sim-run', cmd_sim_run), ('sim-sweep', cmd_sim_sweep)):
        p = sub.add_parser(name, help='run one scenario' if name == 'sim-run' else 'OSCAR vs DTLS client sweep')
        p.add_argument('--config')
        p.add_argument('--out', help='CSV output (default: stdout)')
        p.add_argument('--seed', type=int)
        p.add_argument('--beta', type=float)
        p.add_argument('--preset', choices=['gen16', 'gen32'])
        if name == 'sim-run':
            p.add_argument('--mode', choices=['oscar', 'dtls'])
            p.add_argument('--clients', type=int)
            p.add_argument('--notify', action='store_true', help='push Observe notifications on every resource update')
        else:
            p.add_argument('--clients', help='comma-separated client counts')
            p.add_argument('--seeds', type=int)
            p.add_argument('--jobs', type=int)
            p.add_argument('--summary', help='per-count summary CSV with confidence intervals')
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except (ConfigInvalid, ValidityInverted) as e:
        log.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IoError as e:
        log.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OscarError as e:
        log.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
    except ValueError as e:
        log.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
