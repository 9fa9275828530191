"""Command-line entry point: ``bvmcov <command> --config FILE [--seed S] [--out DIR] [--threads K]``.

Exit codes: 0 when every grid point completed, 1 on a runtime failure or an
aborted grid point, 2 on a malformed configuration or missing file.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import tempfile
from pathlib import Path


from .config import ConfigError, ExperimentConfig, PriorConfig, load_config
from .report import write_outputs
from .runs import COMMANDS, bvm_replicate, execute

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def build_parser():
    ap = argparse.ArgumentParser(prog="bvmcov", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} study")
        sp.add_argument("--config", required=True, help="INI experiment file")
        sp.add_argument("--seed", type=int, default=None, help="override [mc] seed")
        sp.add_argument("--out", default=None, help="override [output] dir")
        sp.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    st = sub.add_parser("selftest", help="run the built-in quick checks")
    st.add_argument("--out", default=None, help="keep selftest artifacts here")
    return ap


def run_command(command, config, seed=None, out=None, threads=1):
    """Load, execute and write artifacts; returns (exit code, RunResult or None)."""
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    if seed is not None and seed < 0:
        raise ConfigError("--seed must be nonnegative")
    cfg = load_config(config, {"seed": seed, "out_dir": out})
    result = execute(cfg, command, threads)
    write_outputs(cfg, result, cfg.out_dir, threads)
    return result.exit_code, result


# ---------------------------------------------------------------- selftest


def _tiny(kind, generator, family, grid, **kw):
    truth = {"generator": generator, **kw.pop("truth", {})}
    prior = PriorConfig(label="prior", family=family, **kw.pop("prior", {}))
    return ExperimentConfig(name=f"selftest-{kind}", kind=kind, truth=truth, priors=(prior,),
                            grid=tuple(grid), replicates=kw.pop("replicates", 2),
                            draws=kw.pop("draws", 400), gibbs_iters=200, seed=12345,
                            divergence={"methods": ("tv", "hellinger", "d_alpha", "renyi"),
                                        "alphas": (0.5,), "directions": 20},
                            options=kw.pop("options", {}), acceptance={}, out_dir="")


def _selftests():
    """(name, callable returning (passed, detail)) pairs for the quick checks."""

    def forced_ghat():
        star = {"diag": 1.0, "offdiag": 0.45}
        known = _tiny("graph-known", "star", "GWishart", [(400, 5)], truth=star)
        unk = dataclasses.replace(known, kind="graph-unknown", options={"graph": {"ghat": "truth"}},
                                  priors=(PriorConfig("prior", "GWishart"),))
        a = bvm_replicate(known, 0, 0)
        b = bvm_replicate(unk, 0, 0)
        ok = a["tv"] == b["tv"] and a["h2"] == b["h2"]
        return ok, f"tv {a['tv'][0]:.6g} vs {b['tv'][0]:.6g}"

    def nested_radii():
        cfg = _tiny("graph-known", "star", "GWishart", [(400, 5)],
                    options={"contraction": {"multipliers": "0.5,1,2,4"}})
        res = execute(cfg, "contraction")
        bad = [c for c in res.checks if "monotone" in c.name and not c.passed]
        return not bad and not res.aborted, f"{len(res.checks)} checks"

    def empty_data():
        cfg = _tiny("graph-known", "path", "GWishart", [(0, 4)], replicates=1)
        res = execute(cfg, "graph-select")
        c = [c for c in res.checks if c.name == "n=0_posterior_equals_prior"]
        return bool(c) and c[0].passed, c[0].detail if c else "missing"

    def audit_pair():
        cfg = _tiny("unstructured-sigma", "ar1", "IW", [(400, 3)], draws=20000, replicates=3,
                    prior={"nu": 3.0})
        res = execute(cfg, "divergence-audit")
        return all(c.passed for c in res.checks), f"{sum(c.passed for c in res.checks)}/{len(res.checks)}"

    def determinism():
        cfg = _tiny("unstructured-sigma", "ar1", "IW", [(100, 3), (400, 3)])
        from .report import format_results
        a = format_results(execute(cfg, "bvm").rows)
        b = format_results(execute(cfg, "bvm").rows)
        return a == b, f"{len(a)} bytes"

    def missing_config():
        with tempfile.TemporaryDirectory() as d:
            code = main(["bvm", "--config", str(Path(d) / "absent.cfg")])
        return code == EXIT_CONFIG, f"exit {code}"

    return [("forced G-hat equals known G", forced_ghat),
            ("contraction mass nested in M", nested_radii),
            ("n=0 graph posterior equals prior", empty_data),
            ("closed-form divergence pair", audit_pair),
            ("repeat run is byte-identical", determinism),
            ("missing config exits 2", missing_config)]


def selftest():
    ok = True
    for name, fn in _selftests():
        try:
            passed, detail = fn()
        except Exception as exc:  # noqa: BLE001 - report and continue
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return EXIT_OK if ok else EXIT_RUNTIME


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return selftest()
    try:
        code, result = run_command(args.command, args.config, args.seed, args.out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    if result.aborted:
        print(f"{len(result.aborted)} grid point(s) aborted", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
