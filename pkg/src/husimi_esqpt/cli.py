"""``husimi-esqpt`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from .cache import ENV_VAR, cache_gc, default_cache_dir
from .config import json_schema, load_config
from .errors import CacheIntegrityError, CacheLockError, ConfigError, NumericalToleranceError
from .workbench import run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CACHE = 4

log = logging.getLogger("husimi_esqpt")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="husimi-esqpt", description="Husimi-function ESQPT workbench")
    ap.add_argument("-v", "--verbose", action="store_true", help="log cache hits and progress")
    sub = ap.add_subparsers(dest="action", required=True)

    r = sub.add_parser("run", help="execute a job config")
    r.add_argument("--config", required=True, help="TOML (or .json) job file")
    r.add_argument("--threads", type=int, default=1, help="scan points evaluated concurrently")
    r.add_argument("--cache", default=None, help=f"eigensystem cache directory (default ${ENV_VAR})")
    r.add_argument("--out", default=None, help="output directory (default: config 'out' or ./results)")
    r.add_argument("--override-grid-check", action="store_true",
                   help="accept phase-space grids below the exactness threshold")

    v = sub.add_parser("validate", help="check a job config without computing")
    v.add_argument("--config", required=True)
    v.add_argument("--override-grid-check", action="store_true")

    g = sub.add_parser("cache-gc", help="evict least-recently-used cache entries")
    g.add_argument("--cache", default=None)
    g.add_argument("--max-bytes", type=int, required=True)

    sub.add_parser("schema", help="print the job-config JSON schema")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.action == "schema":
            print(json.dumps(json_schema(), indent=2))
        elif args.action == "validate":
            from .workbench import validate_job
            validate_job(load_config(args.config), args.override_grid_check)
            print("ok")
        elif args.action == "cache-gc":
            root = args.cache or default_cache_dir()
            if root is None:
                raise ConfigError(f"no cache directory given (use --cache or ${ENV_VAR})")
            print(cache_gc(root, args.max_bytes))
        else:
            cfg = load_config(args.config)
            bundle = run(cfg, args.out, args.cache, args.threads, args.override_grid_check)
            print(bundle.manifest_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CacheIntegrityError, CacheLockError) as exc:
        print(f"cache error: {exc}", file=sys.stderr)
        return EXIT_CACHE
    except (NumericalToleranceError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # precondition failures discovered mid-run, e.g. an extremum on the scan boundary
        print(f"invalid job: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
