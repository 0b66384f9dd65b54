"""Command-line entry point.

Subcommands: simulate, consensus-bench, audit, verify-chain, report.
Exit codes are a stable contract: 0 success, 1 configuration error,
2 runtime error, 3 audit or verification violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import ConfigError, NotFoundError, SatfedError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VIOLATION = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="scenario/benchmark JSON document")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="dotted-path config override, repeatable (e.g. slack_time_s=600)",
    )
    parser.add_argument("--transport", choices=["sim", "service"], default="sim")
    parser.add_argument("--seed", type=int, default=None, help="replaces the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satfed",
        description="Ledger-anchored multi-vendor federated satellite learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="run a federated learning scenario")
    _add_common(simulate)

    bench = sub.add_parser("consensus-bench", help="benchmark quorum modes")
    _add_common(bench)

    audit = sub.add_parser("audit", help="trace and verify a global model token")
    audit.add_argument("--ledger", required=True, help="ledger file (JSON lines)")
    audit.add_argument("--artifacts", required=True, help="off-chain artifact directory")
    audit.add_argument("--token", required=True, help="global model token (hex)")
    audit.add_argument("--out", default=None, help="directory for audit_report.json")

    verify = sub.add_parser("verify-chain", help="replay and validate a ledger file")
    verify.add_argument("--ledger", required=True, help="ledger file (JSON lines)")

    report = sub.add_parser("report", help="render figures from a run directory")
    report.add_argument("--run", required=True, help="directory holding the run CSVs")
    report.add_argument("--out", default=None, help="figure directory (default <run>/figures)")

    return parser


def _load_config(args) -> dict:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    from .scenario import apply_overrides

    raw = apply_overrides(raw, args.override)
    if args.seed is not None:
        raw["seed"] = args.seed
    return raw


def cmd_simulate(args) -> int:
    from .scenario import parse_scenario
    from .simulation import run_simulation

    cfg = parse_scenario(_load_config(args))
    report = run_simulation(cfg, out_dir=args.out, transport=args.transport)
    final = report.rounds[-1] if report.rounds else None
    print(f"simulated {len(report.rounds)} rounds ({cfg.mode})")
    if final:
        print(f"final accuracy {final.accuracy:.4f}, loss {final.loss:.4f}")
    print(f"ledger: {report.ledger_stats['blocks']} blocks, "
          f"head {report.ledger_stats['head_hash'][:16]}…")
    print(f"reports written to {args.out}")
    return EXIT_OK


def cmd_consensus_bench(args) -> int:
    from .bench import run_quorum_sweep
    from .consensus import QuorumConfig, QuorumMode
    from .network import NetworkProfile

    raw = _load_config(args)
    bench = raw.get("benchmark")
    if not isinstance(bench, dict):
        raise ConfigError("config.benchmark: required object missing")
    committee_size = int(bench.get("committee_size", 5))
    block_count = int(bench.get("block_count", 1000))
    tx_batch = int(bench.get("tx_batch", 1))
    modes_raw = bench.get("quorum_modes")
    if not modes_raw:
        raise ConfigError("config.benchmark.quorum_modes: non-empty list required")
    quorum_cfgs = []
    for i, m in enumerate(modes_raw):
        try:
            quorum_cfgs.append(
                QuorumConfig(committee_size, QuorumMode(m["mode"]),
                             q=m.get("q"), f=m.get("f"))
            )
        except (KeyError, ValueError, ConfigError) as exc:
            raise ConfigError(f"config.benchmark.quorum_modes[{i}]: {exc}") from exc
    net_raw = raw.get("network", {})
    profile = NetworkProfile(
        mean_latency_s=float(net_raw.get("mean_latency_s", 0.02)),
        jitter_s=float(net_raw.get("jitter_s", 0.005)),
        drop_probability=float(net_raw.get("drop_probability", 0.0)),
        seed=int(net_raw.get("seed", raw.get("seed", 0))),
    )
    reports = run_quorum_sweep(
        quorum_cfgs, block_count, tx_batch, args.transport, args.out,
        net_profile=profile, save_ledgers=bool(bench.get("save_ledgers", False)),
    )
    for report in reports:
        print(f"{report.quorum_mode}: {report.finalized}/{report.blocks} finalized, "
              f"mean latency {report.mean_latency_s:.4f}s, "
              f"{report.tx_per_s:.0f} tx/s")
    print(f"benchmark artifacts written to {args.out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    from .crypto import ContributionToken, TokenKind
    from .ledger import ArtifactStore, Chain, audit_trace, audit_verify

    try:
        chain = Chain.load(args.ledger)
    except SatfedError as exc:
        print(f"ledger failed to load: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        token_bytes = bytes.fromhex(args.token)
    except ValueError:
        raise ConfigError(f"--token: not valid hex: {args.token!r}") from None
    token = ContributionToken(token_bytes, TokenKind.GLOBAL_MODEL)
    store = ArtifactStore(args.artifacts)
    try:
        tree = audit_trace(chain, token)
    except NotFoundError as exc:
        print(f"token not found: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    report = audit_verify(chain, token, store)

    print(tree.render())
    for guarantee in report.guarantees:
        flag = "ok" if guarantee["holds"] else "VIOLATED"
        print(f"{guarantee['name']}: {flag}")
        for violation in guarantee["violations"]:
            print(f"  - {violation['token']}: {violation['detail']}")
    bad_artifacts = [c for c in report.artifact_checks if not c["ok"]]
    print(f"artifact checks: {len(report.artifact_checks) - len(bad_artifacts)}"
          f"/{len(report.artifact_checks)} ok")
    for check in bad_artifacts:
        print(f"  - {check['token']}: {check['detail']}")

    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "audit_report.json")
    with open(out_path, "w") as fh:
        json.dump(report.to_map(), fh, indent=2, sort_keys=True)
    print(f"audit report written to {out_path}")
    return EXIT_OK if report.clean else EXIT_VIOLATION


def cmd_verify_chain(args) -> int:
    from .ledger import verify_chain_file

    report = verify_chain_file(args.ledger)
    if report.valid:
        print(f"valid: {report.blocks} blocks, head hash {report.head_hash}")
        return EXIT_OK
    for problem in report.problems:
        print(f"block {problem.get('block_index')}: {problem['code']}: {problem['detail']}",
              file=sys.stderr)
    return EXIT_VIOLATION


def cmd_report(args) -> int:
    from .report import render_run

    written = render_run(args.run, args.out)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "consensus-bench": cmd_consensus_bench,
    "audit": cmd_audit,
    "verify-chain": cmd_verify_chain,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SatfedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
