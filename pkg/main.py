#!/usr/bin/env python3
"""
Main driver for running the levy2b acceptance suites against a problem configuration.

Usage:
    python main.py compare --config configs/convex_volatility.toml
    python main.py all --config configs/singleton.toml --seed 7 --csv output/tables

Outputs:
    output/report.json (or --out)
    one CSV per exported table when --csv is given
"""

import argparse
import importlib
import inspect
import logging
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Type

# Fail fast on missing dependencies
REQUIRED_PACKAGES = {
    "numpy": "numpy",
    "scipy": "scipy",
    "sklearn": "scikit-learn",
    "pandas": "pandas",
    "dotenv": "python-dotenv",
}
if sys.version_info < (3, 11):
    REQUIRED_PACKAGES["tomli"] = "tomli"

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def check_dependencies() -> None:
    """Check all required packages are installed. Exit if any missing."""
    missing = []
    for module, package in REQUIRED_PACKAGES.items():
        try:
            importlib.import_module(module)
        except ImportError:
            missing.append(package)

    if missing:
        print("ERROR: Missing required packages:")
        for pkg in missing:
            print(f"  - {pkg}")
        print(f"\nInstall with: pip install {' '.join(missing)}")
        sys.exit(EXIT_CONFIG)


def load_env() -> None:
    """Load .env from the script directory if there is one (LEVY2B_THREADS lives there)."""
    from dotenv import load_dotenv

    env_path = SCRIPT_DIR / ".env"
    if env_path.exists():
        load_dotenv(env_path)


SCRIPT_DIR = Path(__file__).parent


def discover_suites() -> dict[str, Type["Suite"]]:
    """Discover all suite classes in the suites directory."""
    from suites.base import Suite

    suites_dir = SCRIPT_DIR / "suites"
    found = {}

    for file_path in sorted(suites_dir.glob("*.py")):
        if file_path.name.startswith("_") or file_path.name == "base.py":
            continue

        module_name = file_path.stem
        try:
            module = importlib.import_module(f"suites.{module_name}")
            for _, obj in inspect.getmembers(module, inspect.isclass):
                if issubclass(obj, Suite) and obj is not Suite:
                    found[obj.name] = obj
        except Exception as e:
            print(f"  [!] Failed to load {module_name}: {e}")

    return found


def run_suite(
    suite_class: Type["Suite"],
    config: "ProblemConfig",
) -> tuple[str, dict[str, Any], float, str | None]:
    """Run a single suite and return (name, results, elapsed, error message)."""
    from levy2b.errors import Levy2bError

    start_time = time.time()
    error_msg = None

    try:
        suite = suite_class(config)
        results = suite.run()
        if "error" in results:
            error_msg = results["error"]
        else:
            results["tables"] = suite.tables
    except Levy2bError as e:
        results = {"error": f"{type(e).__name__}: {e}"}
        error_msg = results["error"]

    elapsed = time.time() - start_time
    return suite_class.name, results, elapsed, error_msg


def merge_results(
    all_results: dict[str, dict],
    config: "ProblemConfig",
    wall_times: dict[str, float],
) -> dict[str, Any]:
    """Merge all suite results into the final report structure."""
    import numpy
    import pandas
    import scipy
    import sklearn

    from levy2b.report import inputs_digest, verdict

    report: dict[str, Any] = {
        "meta": {
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "wall_time": wall_times,
            "versions": {
                "python": platform.python_version(),
                "numpy": numpy.__version__,
                "scipy": scipy.__version__,
                "scikit-learn": sklearn.__version__,
                "pandas": pandas.__version__,
            },
        },
        "config": {"path": str(config.path) if config.path else None, **config.describe()},
        "suites": {},
    }

    for name, result in all_results.items():
        entry = {
            "inputs_digest": inputs_digest(config.source, name, config.run.seed),
            "outputs": result.get("outputs", {}),
            "diffs": result.get("diffs", {}),
            "verdicts": result.get("verdicts", {}),
        }
        if "error" in result:
            entry["verdicts"]["completed"] = verdict(False, error=result["error"])
        report["suites"][name] = entry

    report["passed"] = all(
        v["pass"] for entry in report["suites"].values() for v in entry["verdicts"].values()
    )
    return report


def build_parser(suite_names: list[str]) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description="Run 2BSDEJ / PIDE acceptance suites on a problem configuration",
    )
    parser.add_argument("suite", choices=suite_names + ["all"], help="Suite to run")
    parser.add_argument("--config", required=True, type=Path, help="Path to a TOML problem configuration")
    parser.add_argument("--seed", type=int, default=None, help="Master seed (overrides run.seed)")
    parser.add_argument("--out", type=Path, default=SCRIPT_DIR / "output" / "report.json",
                        help="Where to write the JSON report")
    parser.add_argument("--csv", type=Path, default=None, help="Directory for CSV tables")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    return parser


def main(argv: list[str] | None = None) -> int:
    check_dependencies()
    load_env()
    sys.path.insert(0, str(SCRIPT_DIR))

    from levy2b.config import load_config
    from levy2b.errors import ConfigError
    from levy2b.report import export_csv, write_report

    all_suites = discover_suites()
    args = build_parser(sorted(all_suites)).parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_config(args.config)
    except ConfigError as e:
        print(f"ERROR: invalid configuration {args.config}:")
        for err in e.errors:
            print(f"  - {err}")
        return EXIT_CONFIG
    if args.seed is not None:
        config.run.seed = args.seed

    names = sorted(all_suites) if args.suite == "all" else [args.suite]
    print(f"Running {len(names)} suite(s) on {args.config} "
          f"(nx={config.grid.nx}, nt={config.grid.nt}, seed={config.run.seed})\n")

    results = {}
    wall_times = {}
    tables = {}
    total_start = time.time()

    for name in names:
        print(f"[ ] {name} ...", end="", flush=True)
        suite_name, result, elapsed, error = run_suite(all_suites[name], config)
        for table_name, table in result.pop("tables", {}).items():
            tables[f"{suite_name}_{table_name}"] = table
        results[suite_name] = result
        wall_times[suite_name] = round(elapsed, 3)

        if error:
            print(f"\r[x] {name}: FAILED ({elapsed:.1f}s) - {error}")
        else:
            failed = [k for k, v in result.get("verdicts", {}).items() if not v["pass"]]
            if failed:
                print(f"\r[x] {name}: {len(failed)} verdict(s) failed ({elapsed:.1f}s) - {', '.join(failed)}")
            else:
                print(f"\r[✓] {name} ({elapsed:.1f}s)" + " " * 20)

    total_elapsed = time.time() - total_start
    print(f"\nCompleted in {total_elapsed:.1f}s")

    report = merge_results(results, config, wall_times)
    path = write_report(report, args.out)
    print(f"\nWrote {path}")

    if args.csv is not None:
        for written in export_csv(tables, args.csv):
            print(f"Wrote {written}")

    return EXIT_PASS if report["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
