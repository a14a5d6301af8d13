"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime error,
4 a verification or fixture check failed.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import experiments as ex
from .errors import ConfigError, RamcpError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("ramcp")

_FIELDS = {f.name: f for f in dataclasses.fields(ex.RunConfig)}
_FLOAT_LISTS = ("alphas", "gammas", "rmcp_alphas", "betas")
_INTS = ("budget", "seed", "replicates", "n_rollouts", "bootstrap", "workers")
_BOOLS = ("strict_eval", "save_traces", "dump_trees")
_STRS = ("experiment", "env", "output")
_OPT_STRS = ("problem_file", "backend")


# --- config files --------------------------------------------------------------


def _key_line(text: str, key: str) -> Optional[int]:
    pat = re.compile(r'^\s*"?' + re.escape(key) + r'"?\s*[:=]')
    for n, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return n
    return None


def _coerce(key: str, value):
    def fail(what):
        return ConfigError(f"{key}: expected {what}, got {value!r}", key=key)

    if key in _FLOAT_LISTS:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
            raise fail("a list of numbers")
        return tuple(float(x) for x in value)
    if key == "modes":
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
            raise fail("a list of mode names")
        return tuple(value)
    if key in _INTS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise fail("an integer")
        return value
    if key in _BOOLS:
        if not isinstance(value, bool):
            raise fail("true or false")
        return value
    if key in _STRS:
        if not isinstance(value, str):
            raise fail("a string")
        return value
    if key in _OPT_STRS:
        if value is not None and not isinstance(value, str):
            raise fail("a string")
        return value
    raise ConfigError(f"unknown configuration key {key!r}", key=key)


def parse_config_text(text: str, suffix: str, path: str = "<config>") -> Dict[str, object]:
    """Parse a JSON or TOML config document into RunConfig keyword arguments."""
    try:
        if suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            try:
                raw = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                m = re.search(r"line (\d+)", str(exc))
                if m:
                    line = int(m.group(1))
                elif "end of document" in str(exc):
                    line = max(1, len(text.splitlines()))
                else:
                    line = None
                raise ConfigError(f"invalid TOML: {exc}", path=path, line=line) from None
        else:
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from None
        if not isinstance(raw, dict):
            raise ConfigError("top level must be a table/object", path=path, line=1)
        out = {}
        for key, value in raw.items():
            name = key.replace("-", "_")
            if name not in _FIELDS:
                raise ConfigError(f"unknown configuration key {key!r}", key=key)
            out[name] = _coerce(key, value)
        return out
    except ConfigError as exc:
        if exc.path is None and exc.key is not None:
            raise exc.located(path, _key_line(text, exc.key)) from None
        raise


def load_config_file(path: str) -> Dict[str, object]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc.strerror}", path=path) from None
    return parse_config_text(text, p.suffix.lower(), str(path))


def build_config(experiment: str, file_values: Dict[str, object], flag_values: Dict[str, object],
                 text: Optional[str] = None, path: Optional[str] = None) -> ex.RunConfig:
    """Defaults, then file values, then command-line flags; validation errors point at the file."""
    values = dict(file_values)
    values.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        named = values.pop("experiment", experiment)
        if named != experiment:
            raise ConfigError(f"config is for experiment {named!r}, not {experiment!r}",
                              key="experiment")
        return ex.make_config(experiment, **values)
    except ConfigError as exc:
        if path is not None and exc.key in file_values and flag_values.get(exc.key) is None:
            raise exc.located(path, _key_line(text or "", exc.key)) from None
        raise


# --- argument parsing --------------------------------------------------------------


def _floats(s: str) -> List[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _modes(s: str) -> List[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or TOML run configuration")
    p.add_argument("--env", help="environment name (bandit, patient)")
    p.add_argument("--problem-file", dest="problem_file", help="problem JSON document")
    p.add_argument("--alphas", type=_floats, help="CVaR levels, comma separated")
    p.add_argument("--gammas", type=_floats, help="exponential-utility baseline gammas")
    p.add_argument("--rmcp-alphas", dest="rmcp_alphas", type=_floats,
                   help="CVaR levels for the state-keyed baseline")
    p.add_argument("--modes", type=_modes, help="search variants, e.g. F,I")
    p.add_argument("--budget", type=int, help="search iterations per run")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--replicates", type=int)
    p.add_argument("--rollouts", dest="n_rollouts", type=int, help="evaluation rollouts per model")
    p.add_argument("--betas", type=_floats, help="prior-shift levels")
    p.add_argument("--bootstrap", type=int, help="bootstrap resamples for curve CIs")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--backend", choices=["python", "cython"])
    p.add_argument("--strict-eval", dest="strict_eval", action="store_const", const=True,
                   help="fail when a rollout leaves the averaged policy's support")
    p.add_argument("--dump-tree", dest="dump_trees", action="store_const", const=True,
                   help="write every final search tree as JSON under trees/")
    p.add_argument("--output", "-o", help="output directory (relative paths resolve under "
                                          "$RAMCP_OUTPUT_ROOT when set)")
    p.add_argument("--verify", action="store_true",
                   help="re-run in memory afterwards and diff against the written files")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ramcp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("converge", "belief and value traces of the search"),
                           ("robustness", "value under adversarial prior shift"),
                           ("patient", "patient-treatment robustness study")):
        p = sub.add_parser(name, help=helptext)
        _add_run_args(p)
        if name == "patient":
            p.add_argument("--full", action="store_true",
                           help=f"use {ex.FULL_PATIENT_REPLICATES} replicates")
    p = sub.add_parser("oracle-fixtures", help="write exact reference constants")
    p.add_argument("--output", "-o", help="directory for the fixture files")
    p.add_argument("--check", action="store_true",
                   help="compare freshly computed fixtures with the packaged ones")
    p = sub.add_parser("verify", help="re-run a finished run directory and diff its files")
    p.add_argument("rundir")
    return parser


def _resolve_output(path: str) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    return ex.output_root(".") / p


_RUN_FLAGS = ("env", "problem_file", "alphas", "gammas", "rmcp_alphas", "modes", "budget", "seed",
              "replicates", "n_rollouts", "betas", "bootstrap", "workers", "backend",
              "strict_eval", "dump_trees", "output")


def diff_files(expected: Dict[str, str], outdir: Path) -> List[str]:
    """Names whose on-disk bytes differ from ``expected`` (missing files included)."""
    bad = []
    for name, text in sorted(expected.items()):
        path = outdir / name
        if not path.is_file() or path.read_bytes() != text.encode("utf-8"):
            bad.append(name)
    return bad


def _cmd_run(args) -> int:
    file_values, text, path = {}, None, None
    if args.config:
        path = args.config
        file_values = load_config_file(path)
        text = Path(path).read_text(encoding="utf-8")
    flags = {k: getattr(args, k, None) for k in _RUN_FLAGS}
    for k in _FLOAT_LISTS + ("modes",):
        if flags.get(k) is not None:
            flags[k] = tuple(flags[k])
    if getattr(args, "full", False):
        flags["replicates"] = ex.FULL_PATIENT_REPLICATES
    if flags["output"] is None and "output" not in file_values:
        flags["output"] = args.command
    config = build_config(args.command, file_values, flags, text, path)
    outdir = _resolve_output(config.output)
    files = ex.run(config, outdir)
    print(f"wrote {len(files)} files to {outdir}")
    if args.verify:
        return _verify(outdir)
    return EXIT_OK


def _verify(outdir: Path) -> int:
    meta_path = outdir / "run.json"
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run record: {exc}", path=str(meta_path)) from None
    cfg = dict(meta["config"])
    experiment = cfg.pop("experiment")
    for k in _FLOAT_LISTS + ("modes",):
        cfg[k] = tuple(cfg[k])
    config = ex.make_config(experiment, **cfg)
    fresh = ex.run(config, None)
    bad = diff_files(fresh, outdir)
    if bad:
        print("verification FAILED; differing files: " + ", ".join(bad))
        return EXIT_CHECK
    print(f"verified {len(fresh)} files in {outdir}: byte-identical")
    return EXIT_OK


def _cmd_fixtures(args) -> int:
    from .fixtures import fixture_files, packaged_fixture_dir

    files = fixture_files()
    if args.check:
        bad = diff_files(files, packaged_fixture_dir())
        if bad:
            print("fixture check FAILED; stale: " + ", ".join(bad))
            return EXIT_CHECK
        print("packaged fixtures match a fresh computation")
        return EXIT_OK
    outdir = _resolve_output(args.output or "fixtures")
    ex.write_files(outdir, files)
    print(f"wrote {len(files)} fixture files to {outdir}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "oracle-fixtures":
            return _cmd_fixtures(args)
        if args.command == "verify":
            return _verify(Path(args.rundir))
        return _cmd_run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RamcpError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
