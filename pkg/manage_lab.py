#!/usr/bin/env python3
"""
Fokker-Planck laboratory management tool

Usage:
    python manage_lab.py validate --scenario heat_1d
    python manage_lab.py solve --scenario heat_1d
    python manage_lab.py commutator-study --scenario smooth_1d
    python manage_lab.py regularity-study --scenario w1p_singular_1d --ladder 128,256,512
    python manage_lab.py stability-study --scenario bounded_rough_1d
    python manage_lab.py energy-audit --scenario bounded_rough_1d
    python manage_lab.py equivalence-check --scenario smooth_1d
    python manage_lab.py sde-compare --scenario sde_heat_1d --seed 7
    python manage_lab.py history --all --detailed
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from fplab import create_app
from fplab.errors import LabError, ScenarioValidationError, jsonable
from fplab.experiments import StudySettings, StudySpec, run_study
from fplab.hypotheses import verdict_word
from fplab.models import RunRecord
from fplab.scenario import load_scenario, resolve_scenario_path, validate_scenario

STUDY_COMMANDS = {
    "solve": "solve",
    "commutator-study": "commutator",
    "regularity-study": "regularity",
    "stability-study": "stability",
    "energy-audit": "energy_audit",
    "equivalence-check": "equivalence",
    "sde-compare": "sde_compare",
}
HISTORY_LIMIT = 10


def parse_ladder(text: str | None) -> tuple[float, ...] | None:
    if not text:
        return None
    try:
        return tuple(float(item) for item in text.split(",") if item.strip())
    except ValueError:
        raise ScenarioValidationError(
            f"invalid ladder {text!r}", issues=[{"field": "ladder", "message": "expected comma-separated numbers"}]
        ) from None


def print_error_record(exc: LabError) -> None:
    print(f"❌ Error: {exc.message}")
    print(json.dumps(exc.to_record(), indent=2, ensure_ascii=False))


def _load(app, reference: str):
    path = resolve_scenario_path(reference, app.config["SCENARIO_FOLDER"], app.config["SCENARIO_MATCH_THRESHOLD"])
    return path, load_scenario(path, app.config["SCENARIO_MATCH_THRESHOLD"])


def validate_command(app, reference: str) -> int:
    """Assumption checks and activated regimes for one scenario."""
    with app.app_context():
        try:
            _, scenario = _load(app, reference)
            report = validate_scenario(scenario, app.config["SCENARIO_MATCH_THRESHOLD"])
        except ScenarioValidationError as exc:
            print_error_record(exc)
            return 2
        except LabError as exc:
            print_error_record(exc)
            return 1

        print(f"\n{'=' * 80}")
        for line in report.summary_lines():
            print(line)
        print(f"{'=' * 80}")
        if not report.passed:
            print("❌ Scenario violates its declared assumptions.")
            print(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
            return 2
        activated = report.activated
        if activated:
            print(f"✓ Applicable regimes: {', '.join(activated)}")
        else:
            print("⚠️  Assumptions hold, but no uniqueness or regularity regime applies.")
        return 0


def study_command(app, command: str, args: argparse.Namespace) -> int:
    """Run one study and print its verdicts."""
    kind = STUDY_COMMANDS[command]
    with app.app_context():
        try:
            path, scenario = _load(app, args.scenario)
            spec = StudySpec(
                kind=kind,
                scenario=scenario,
                out=Path(args.out or app.config["RESULTS_FOLDER"]),
                scenario_path=str(path),
                ladder=parse_ladder(args.ladder),
                seed=args.seed,
                grid=args.grid,
            )
        except ScenarioValidationError as exc:
            print_error_record(exc)
            return 2

        print(f"📝 Running {kind} study on {scenario.label}...")
        result = run_study(spec, StudySettings.from_mapping(app.config))
        manifest = result.manifest

        print(f"\n{'=' * 80}")
        print(f"{kind} study: {manifest.scenario_label} [{manifest.content_hash[:12]}]")
        print(f"{'=' * 80}")
        for entry in manifest.verdicts.values():
            mark = {"PASS": "✓", "FAIL": "❌", "INFO": "ℹ️ "}[verdict_word(entry)]
            print(f"{mark} {entry['label']}")
        if manifest.error:
            print(json.dumps(jsonable(manifest.error), indent=2, ensure_ascii=False))
        print(f"\nStatus: {result.status.upper()}")
        print(f"Artifacts: {result.run_dir}")
        return result.exit_code


def history_command(app, limit: int | None = HISTORY_LIMIT, detailed: bool = False) -> int:
    """List recorded study runs, newest first."""
    with app.app_context():
        query = RunRecord.query.order_by(RunRecord.id.desc())
        records = query.limit(limit).all() if limit else query.all()
        if not records:
            print("ℹ️  No study runs recorded yet.")
            return 0

        total = RunRecord.query.count()
        print(f"\n{'=' * 80}")
        print(f"Study runs ({len(records)} of {total} shown)")
        print(f"{'=' * 80}\n")
        for record in records:
            mark = "✓" if record.status == "passed" else "❌"
            print(f"[{record.id}] {mark} {record.study} on {record.scenario_label} ({record.status})")
            if detailed:
                print(f"    Hash: {record.content_hash}")
                print(f"    Manifest: {record.manifest_path}")
                print(f"    Created: {record.created_at.strftime('%Y-%m-%d %H:%M:%S')}")
                for entry in record.verdicts_as_dict().values():
                    print(f"    {verdict_word(entry)}: {entry['label']}")
                for line in record.logs_as_list():
                    print(f"      {line}")
            print()
        if limit and total > limit:
            print(f"... and {total - limit} more runs")
            print("Use --all flag to list every run\n")
        return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Fokker-Planck laboratory: commutator ladders, solver audits and particle checks",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("command", choices=["validate", *STUDY_COMMANDS, "history"], help="Command to execute")
    parser.add_argument("--scenario", help="Scenario file path or name inside SCENARIO_FOLDER")
    parser.add_argument("--out", type=Path, help="Results directory (defaults to RESULTS_FOLDER)")
    parser.add_argument("--seed", type=int, help="Override the scenario seed")
    parser.add_argument("--ladder", help="Comma-separated delta values or grid sizes")
    parser.add_argument("--grid", type=int, help="Override the scenario grid size n")
    parser.add_argument("--all", action="store_true", help="List every run (for history)")
    parser.add_argument("--detailed", action="store_true", help="Show verdicts and logs (for history)")
    return parser


def main(argv: list[str] | None = None, config_object: str = "config.Config") -> int:
    args = build_parser().parse_args(argv)

    try:
        app = create_app(config_object)
        if args.command == "history":
            return history_command(app, limit=None if args.all else HISTORY_LIMIT, detailed=args.detailed)

        if not args.scenario:
            print("❌ Error: --scenario is required")
            print(f"   Usage: python manage_lab.py {args.command} --scenario <path or name>")
            return 2

        if args.command == "validate":
            return validate_command(app, args.scenario)
        return study_command(app, args.command, args)

    except KeyboardInterrupt:
        print("\n\n❌ Operation cancelled by user.")
        return 1
    except Exception as e:
        print(f"\n❌ Error: {e}")
        import traceback

        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
