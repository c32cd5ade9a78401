"""Command-line entry point.

Subcommands: ``generate``, ``recover``, ``diagnose``, ``sweep``,
``validate-bounds`` and ``selftest``.  Exit status is 0 on success, 1 for
usage or configuration errors, 2 for runtime failures and 3 when a check
(bound validation or selftest) fails.
"""

import argparse
import sys
import warnings

from .basis import BasisWarning, DomainBasis
from .encoder import read_encoded_csv, write_encoded_csv
from .errors import InvalidInputError, MechmixError
from .generator import EdgeInjection, simulate, write_bundle_csv, write_metadata
from .harness import (_FIELD_TYPES, PRESETS, _coerce_axis_value, _write_rows, build_world,
                      format_config, load_config, parse_value, preset, run_single, run_sweep)
from .recovery import SmoothingConfig, calibrate_two_point, smooth
from .selftest import run_selftest

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

#: Sweeps behind ``validate-bounds``: both noise and perturbation schemes.
BOUND_SCHEMES = (("noise_sigma", (0.01, 0.05, 0.1, 0.2, 0.5)),
                 ("perturbation_norm", (0.1, 0.2, 0.3, 0.5, 0.7)))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config_args(p):
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config field (repeatable)")
    p.add_argument("--seed", type=int, help="run only this seed")


def _load(args):
    """Config from ``--preset``, ``--config``, ``--set`` and ``--seed``, in that order."""
    try:
        return _load_config(args)
    except (InvalidInputError, OSError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _load_config(args):
    cfg = preset(args.preset) if args.preset else None
    if args.config:
        cfg = load_config(args.config, cfg)
    elif cfg is None:
        cfg = preset("table2")
    changes = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidInputError(f"--set expects KEY=VALUE, got {item!r}")
        changes[key.strip()] = parse_value(key.strip(), value)
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if changes:
        cfg = cfg.replace(**changes)
    return cfg


def build_parser():
    parser = _Parser(prog="mechmix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="simulate a trajectory, its encodings and the basis")
    _config_args(p)
    p.add_argument("--out", required=True, help="output prefix")

    p = sub.add_parser("recover", help="recover mixing weights from encodings and a basis")
    p.add_argument("--encoded", required=True, help="CSV with zhat_* (or z_*) columns")
    p.add_argument("--basis", required=True, help="basis text file")
    p.add_argument("--out", required=True, help="recovery CSV path")
    p.add_argument("--smoothing", choices=("window", "tv", "none"), default="window")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--lam", type=float, help="TV penalty; chosen by GCV if omitted")
    p.add_argument("--calibrate", action="store_true",
                   help="two-point calibration from the alpha_* endpoints in --encoded")

    p = sub.add_parser("diagnose", help="run one configuration and report diagnostics")
    _config_args(p)
    p.add_argument("--out", help="output prefix for recovery, scores and diagnostics")

    p = sub.add_parser("sweep", help="sweep one config field over values and seeds")
    _config_args(p)
    p.add_argument("--axis", help="config field to vary (default: the preset's axis)")
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--out", required=True, help="summary CSV path")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("validate-bounds", help="check the pointwise error bound on both sweeps")
    _config_args(p)
    p.add_argument("--out", help="CSV of every (error, bound) point")

    sub.add_parser("selftest", help="run the fast oracle checks")
    return parser


def cmd_generate(args, out):
    cfg = _load(args)
    seed = cfg.seeds[0]
    ms, schedule, sampler = build_world(cfg, seed)
    injection = EdgeInjection(weight=cfg.edge_weight) if cfg.violation else None
    bundle = simulate(ms, schedule, cfg.noise_sigma, seed, obs_dim=cfg.obs_dim,
                      mixing_depth=cfg.mixing_depth, injection=injection)
    meta = {"perturbation_norm": cfg.perturbation_norm, "activation_slope": cfg.activation_slope}
    write_bundle_csv(bundle, f"{args.out}_trajectory.csv", meta)
    active = schedule.active_domains
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BasisWarning)
        basis = sampler.basis(active)
    basis.save(f"{args.out}_basis.txt")
    enc = sampler.probe(schedule.alphas, cfg.n_probe, key="transition", mode=cfg.probe_mode)
    write_encoded_csv(f"{args.out}_encoded.csv", enc.mean(axis=1), schedule.alphas)
    write_metadata(f"{args.out}_encoded.csv.meta",
                   {"config": format_config(cfg).replace("\n", "; "), "seed": seed})
    for suffix in ("trajectory.csv", "encoded.csv", "basis.txt"):
        out(f"wrote {args.out}_{suffix}")
    return EXIT_OK


def cmd_recover(args, out):
    encoded, alphas = read_encoded_csv(args.encoded)
    basis = DomainBasis.load(args.basis)
    config = SmoothingConfig(args.smoothing, args.window, args.lam)
    result = smooth(encoded, basis, config)
    if args.calibrate:
        if alphas is None:
            raise InvalidInputError("--calibrate needs alpha_* columns in the encoded CSV")
        local = alphas[:, list(basis.domains)]
        result = calibrate_two_point(result, local[0], local[-1])
    result.write_csv(args.out)
    write_metadata(args.out + ".meta", {"encoded": args.encoded, "basis": args.basis,
                                        "smoothing": args.smoothing, "window": args.window,
                                        "lambda_used": result.lambda_used})
    out(f"wrote {args.out}")
    return EXIT_OK


def cmd_diagnose(args, out):
    cfg = _load(args)
    if args.out:
        cfg = cfg.replace(output=args.out)
    for seed in cfg.seeds:
        run = run_single(cfg.replace(output=f"{cfg.output}_seed{seed}" if cfg.output else ""),
                         seed)
        out(f"# seed {seed}")
        out(run.diagnostics.to_text().rstrip())
    return EXIT_OK


def cmd_sweep(args, out):
    cfg = _load(args)
    axis = args.axis or cfg.sweep_axis
    values = cfg.sweep_values
    if args.values:
        values = tuple(v for v in args.values.replace(" ", "").split(",") if v)
    if axis not in _FIELD_TYPES or not values:
        raise UsageError(f"need a config field to sweep and values (axis={axis!r})")
    try:
        values = tuple(_coerce_axis_value(axis, v) for v in values)
    except (InvalidInputError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    result = run_sweep(cfg, axis, values, path=args.out, jobs=args.jobs)
    out(f"wrote {args.out} ({len(result.summary)} rows, {len(result.runs)} runs)")
    return EXIT_OK


def validate_bounds(cfg, write=print):
    """Pointwise bound check on every run of both sweep schemes.

    Returns ``(rows, violations)`` where ``rows`` holds one entry per
    ``(scheme, value, seed, t)``.
    """
    rows, total = [], 0
    for axis, values in BOUND_SCHEMES:
        for v in values:
            run_cfg = cfg.replace(**{axis: v, "output": ""})
            n_points = n_viol = 0
            for seed in cfg.seeds:
                bound = run_single(run_cfg, seed, write=False).bound
                n_points += bound.errors.size
                n_viol += bound.violations
                for t, (e, b) in enumerate(zip(bound.errors, bound.bounds)):
                    rows.append({"axis": axis, "value": v, "seed": seed, "t": t,
                                 "error": float(e), "bound": float(b)})
            total += n_viol
            write(f"{axis}={v}: points {n_points}, violations {n_viol}")
    write(f"points: {len(rows)}")
    write(f"violations: {total}")
    return rows, total


def cmd_validate_bounds(args, out):
    cfg = _load(args)
    rows, total = validate_bounds(cfg, out)
    if args.out:
        _write_rows(args.out, rows)
    return EXIT_CHECK if total else EXIT_OK


def cmd_selftest(args, out):
    return EXIT_CHECK if run_selftest(out) else EXIT_OK


COMMANDS = {"generate": cmd_generate, "recover": cmd_recover, "diagnose": cmd_diagnose,
            "sweep": cmd_sweep, "validate-bounds": cmd_validate_bounds,
            "selftest": cmd_selftest}


def main(argv=None, out=print):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"mechmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"mechmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MechmixError, OSError, ValueError) as exc:
        print(f"mechmix: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
