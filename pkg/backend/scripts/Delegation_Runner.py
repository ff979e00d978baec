#!/usr/bin/env python3
"""
Delegation Runner - run scenarios through the delegation protocols and the
verification experiment from the command line.

Exit codes: 0 when every check passes, 1 when a fidelity, distribution or
verification check fails, 2 on invalid input.
"""

import argparse
import logging
import os
import sys
from collections import Counter

# Add the parent directory to the path so we can import config and the package
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

try:
    import config  # type: ignore
except ImportError:
    print("ERROR: Could not import config. Make sure config.py exists in the backend directory.")
    sys.exit(2)

from scripts.blind_delegation.adversaries import Honest, parse_behavior
from scripts.blind_delegation.artifacts import ArtifactWriter
from scripts.blind_delegation.circuit_ir import CapabilityProfile
from scripts.blind_delegation.errors import DelegationError
from scripts.blind_delegation.protocol_engine import PROTOCOLS, run_protocol, sample_outcomes
from scripts.blind_delegation.scenarios import SCENARIOS, load_circuit, parse_angles
from scripts.blind_delegation.sim_core import RngStreams, basis_probabilities, fidelity_up_to_global_phase
from scripts.blind_delegation.verification import (
    build_verifier,
    detection_experiment,
    distribution_check,
    experiment_csv,
    run_interleaved,
)

FIDELITY_TOLERANCE = 1e-10
PROFILE_PRESETS = {
    "full": CapabilityProfile.full,
    "one-qubit": CapabilityProfile.one_qubit_gates,
    "partial": CapabilityProfile.partial,
}

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(description="Delegation Runner - blind delegated quantum computation")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run a scenario or circuit file through a protocol")
    run.add_argument("scenario", help=f"Scenario name ({', '.join(sorted(SCENARIOS))}) or circuit JSON path")
    run.add_argument("--protocol", choices=PROTOCOLS, default="p2")
    run.add_argument("--M", type=int, default=2, help="Client qubit capacity")
    run.add_argument("--profile", help="Profile JSON path, or one of: " + ", ".join(PROFILE_PRESETS))
    run.add_argument("--seed", type=int, default=config.SEED)
    run.add_argument("--shots", type=int, default=config.SHOTS, help="0 runs a single statevector check")
    run.add_argument("--trap-density", type=float, default=config.TRAP_DENSITY)
    run.add_argument("--angle-splits", type=int, default=2,
                     help="Shares per private rotation a Protocol 3 client cannot run itself")
    run.add_argument("--key-mode", default=config.KEY_MODE, choices=("protocol1", "pool", "external"))
    run.add_argument("--angles", help="Comma-separated or JSON list of scenario angles")
    run.add_argument("--verify", action="store_true", help="Interleave verifier circuits")
    run.add_argument("--verifier-qubits", type=int, default=3)
    run.add_argument("--verifier-circuits", type=int, default=1)
    run.add_argument("--adversary", default="honest", help="honest, drop:N[:scope] or measure:W,...")
    run.add_argument("--jobs", type=int, default=config.JOBS)
    run.add_argument("--out", help="Output directory for artifacts")

    experiment = commands.add_parser("verify-experiment", help="Non-detection experiment rows as CSV")
    experiment.add_argument("--N", type=int, required=True, help="Original qubits")
    experiment.add_argument("--N-prime", dest="n_prime", type=int, required=True, help="Verifier qubits")
    experiment.add_argument("--n", type=int, nargs="+", required=True, help="Shot counts")
    experiment.add_argument("--trials", type=int, default=10000, help="0 gives analytic columns only")
    experiment.add_argument("--depth", type=int, default=2)
    experiment.add_argument("--seed", type=int, default=config.SEED)
    experiment.add_argument("--jobs", type=int, default=config.JOBS,
                            help="Worker processes for the dropped-gate runs")
    experiment.add_argument("--out", help="Output directory for detection.csv")
    return parser


def resolve_profile(args):
    if args.protocol == "p4":
        return None
    if args.profile in PROFILE_PRESETS:
        return PROFILE_PRESETS[args.profile](args.M)
    if args.profile:
        return CapabilityProfile.load(args.profile)
    if args.protocol == "p3":
        return CapabilityProfile.one_qubit_gates(args.M)
    return CapabilityProfile.full(args.M)


def protocol_options(args, behavior):
    options = {"key_mode": args.key_mode}
    # run_protocol rejects any behavior under p4
    if args.protocol != "p4" or behavior is not None:
        options["behavior"] = behavior
    if args.protocol in ("p3", "p4"):
        options["trap_density"] = args.trap_density
    if args.protocol == "p3":
        options["angle_splits"] = args.angle_splits
    return options


def output_dir(args):
    if args.out:
        return args.out
    stem = os.path.splitext(os.path.basename(args.scenario))[0]
    return os.path.join(str(config.OUTPUT_DIR), f"{stem}-{args.protocol}-seed{args.seed}")


def run_scenario(args):
    circuit = load_circuit(args.scenario, parse_angles(args.angles))
    profile = resolve_profile(args)
    behavior = parse_behavior(args.adversary)
    if isinstance(behavior, Honest):
        behavior = None
    options = protocol_options(args, behavior)
    writer = ArtifactWriter(output_dir(args))

    print(f"🚀 Delegation Runner - {args.scenario} via {args.protocol}", flush=True)
    print(f"📋 {circuit.n_qubits} qubits, {len(circuit)} gates, seed {args.seed}", flush=True)
    if profile is not None:
        print(f"🧰 Client profile: {profile.to_json()}", flush=True)

    reference_state = circuit.simulate()
    reference = basis_probabilities(reference_state)
    checks = {}

    plain = run_protocol(args.protocol, circuit, profile, RngStreams(args.seed), measure=False, **options)
    fidelity = fidelity_up_to_global_phase(plain.state, reference_state)
    checks["fidelity"] = fidelity >= 1 - FIDELITY_TOLERANCE
    print(f"{'✅' if checks['fidelity'] else '❌'} Fidelity vs plain circuit: {fidelity:.12f}", flush=True)

    summary = {
        "scenario": args.scenario,
        "protocol": args.protocol,
        "seed": args.seed,
        "shots": args.shots,
        "profile": profile.to_json() if profile is not None else None,
        "adversary": behavior.describe() if behavior is not None else "honest",
        "fidelity": fidelity,
        "run": plain.summary,
    }

    report = None
    if args.verify:
        spec = build_verifier(args.verifier_qubits, args.verifier_circuits,
                              RngStreams(args.seed).stream("verifier"), reference=circuit)
        print(f"🔍 Verifying with {spec.k} verifier circuit(s) on {spec.n_qubits} extra qubits", flush=True)
        report = run_interleaved(circuit, profile, spec, behavior, RngStreams(args.seed).child("verify", 0),
                                 protocol=args.protocol, shots=max(args.shots, 1),
                                 trap_density=args.trap_density, jobs=args.jobs)
        counts = report.original_counts
        checks["verification"] = report.mismatches == 0
        writer.verification(report.to_json())
        summary["verification"] = report.to_json()
        mark = "✅" if checks["verification"] else "🚨"
        print(f"{mark} Verdict: {report.verdict.value} ({report.mismatches}/{report.shots} shots mismatched, "
              f"analytic non-detection {report.analytic_nondetection:.3e})", flush=True)
    elif args.shots > 0:
        print(f"🎲 Sampling {args.shots} shots on {args.jobs} worker(s)...", flush=True)
        counts = sample_outcomes(args.protocol, circuit, profile, args.seed, args.shots, args.jobs, **options)
    else:
        counts = Counter()

    if args.shots > 0:
        passed, worst = distribution_check(counts, sum(counts.values()), reference)
        checks["distribution"] = passed
        summary["distribution_worst_sigma"] = worst
        writer.distribution(counts, sum(counts.values()), reference)
        for outcome, count in sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:8]:
            print(f"   |{outcome}⟩  {count}  (reference {reference.get(outcome, 0.0):.4f})", flush=True)
        print(f"{'✅' if passed else '❌'} Distribution vs reference: worst deviation {worst:.2f}σ", flush=True)
        shot = run_protocol(args.protocol, circuit, profile, RngStreams(args.seed).child("shot", 0),
                            measure=True, **options)
        writer.run(shot, dict(summary, checks=checks))
    else:
        writer.run(plain, dict(summary, checks=checks))

    for name in writer.names():
        print(f"💾 Wrote {os.path.join(str(writer.out_dir), name)}", flush=True)
    if all(checks.values()):
        print("🎉 All checks passed", flush=True)
        return EXIT_OK
    print(f"❌ Failed checks: {', '.join(name for name, ok in checks.items() if not ok)}", flush=True)
    return EXIT_FAILED


def run_verification_experiment(args):
    rows = []
    for shots in args.n:
        print(f"🧪 N={args.N} N'={args.n_prime} n={shots} trials={args.trials}", flush=True)
        rows.append(detection_experiment(args.N, args.n_prime, shots, args.trials, args.seed, args.depth,
                                         jobs=args.jobs))
    text = experiment_csv(rows)
    print(text, end="", flush=True)
    if args.out:
        path = ArtifactWriter(args.out).csv("detection.csv", text)
        print(f"💾 Wrote {path}", flush=True)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, config.LOG_LEVEL, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return run_scenario(args)
        return run_verification_experiment(args)
    except DelegationError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr, flush=True)
        return EXIT_INVALID
    except (OSError, ValueError) as e:
        print(f"❌ Invalid input: {e}", file=sys.stderr, flush=True)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
