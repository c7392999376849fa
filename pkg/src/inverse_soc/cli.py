"""Command line: ``inverse-soc run|report|validate``.

Exit codes: 0 success, 2 invalid config or missing input, 3 numerical failure.
"""

import argparse
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path

from .config import config_hash, load_config, with_overrides
from .errors import ConfigError, InverseSOCError
from .experiments import dumps, manifest, run_experiment

log = logging.getLogger("inverse_soc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _write_all(out_dir, files):
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, text in sorted(files.items()):
        data = text.encode()
        (out_dir / name).write_bytes(data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    return hashes


def cmd_run(args):
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, args.seed_override, args.output_dir)
    out_dir = Path(cfg.get("output_dir") or Path("out") / Path(args.config).stem)
    log.info("running %s (seed %d) into %s", cfg["experiment"], cfg["seed"], out_dir)
    # the output location is not part of the numerical identity of a run
    h = config_hash({k: v for k, v in cfg.items() if k != "output_dir"})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out, summary_file, wall = run_experiment(cfg)
    for w in caught:
        log.warning("%s", w.message)
    hashes = _write_all(out_dir, out.files)
    man = manifest(cfg, h, out, summary_file, wall, hashes)
    man["warnings"] = sorted({str(w.message) for w in caught})
    (out_dir / "manifest.json").write_text(dumps(man))
    for key, val in out.report.items():
        print(f"{key}\t{val}")
    return EXIT_OK


def cmd_report(args):
    out_dir = Path(args.output_dir)
    path = out_dir / "manifest.json"
    if not path.is_file():
        raise ConfigError(f"<dir>: no manifest.json in {out_dir}")
    man = json.loads(path.read_text())
    src = man.get("summary_file", "manifest.json")
    print(f"experiment\t{man['experiment']}\tmanifest.json")
    print(f"seed\t{man['seed']}\tmanifest.json")
    print(f"config_hash\t{man['config_hash']}\tmanifest.json")
    for key, val in man.get("report", {}).items():
        print(f"{key}\t{val}\t{src}")
    return EXIT_OK


def cmd_validate(args):
    cfg = load_config(args.config)
    print(f"ok\t{cfg['experiment']}\t{config_hash(cfg)}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="inverse-soc",
                                description="Inverse stochastic control experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("config")
    r.add_argument("--output-dir")
    r.add_argument("--seed-override", type=int)
    r.set_defaults(func=cmd_run)
    rep = sub.add_parser("report", help="print the key numbers of a finished run")
    rep.add_argument("output_dir")
    rep.set_defaults(func=cmd_report)
    v = sub.add_parser("validate", help="check a config file against the schema")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InverseSOCError, ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
