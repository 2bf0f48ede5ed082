"""Command-line front end: ``combsum <subcommand> --spec FILE ...``.

Every subcommand reads an ensemble spec file, validates its parameters before
computing anything, and writes CSV (to ``--out`` atomically, else stdout).
Floats are printed with 17 significant digits. A short human summary goes to
stderr.

Exit codes: 0 success; 1 a ``check`` that failed; 2 a guard stopped the run
(one ``guard: <ErrorType>: <message>`` line on stderr) or every requested
row was skipped; 64 usage or spec-file errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .ensemble import check_bernstein, check_centering
from .errors import CombsumError, ZoneExceededError
from .exact import enumerate_law, mgf_exact
from .mc import (
    MIN_NAIVE_SAMPLES,
    EsseenRow,
    RatioRow,
    TailEstimate,
    TiltedChainConfig,
    default_workers,
    esseen_decay,
    naive_tail,
    ratio_experiment,
    tilted_is_tail,
)
from .specfile import SpecError, ensemble_from_table, read_spec
from .stats import DEFAULT_SLACK, MomentSummary, gamma_n
from .tilt import importance_tilt, solve_saddlepoint

EX_OK, EX_CHECK_FAILED, EX_GUARD, EX_USAGE = 0, 1, 2, 64

SADDLEPOINT_HEADER = ("u", "h", "log_mgf", "m", "sigma2", "tail_approx", "gauss_tail", "ratio")
TAIL_HEADER = ("u",) + TailEstimate.CSV_HEADER
EXACT_HEADER = ("value", "prob")
MGF_HEADER = ("z_re", "z_im", "phi_re", "phi_im")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(x):
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return format(x + 0.0, ".17g")
    return str(x)


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _complexes(text):
    try:
        return [complex(t.replace(" ", "")) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated complex numbers, got {text!r}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated parameters of one invocation."""

    command: str
    spec: str
    ensemble: dict
    params: dict = field(default_factory=dict)
    out: str | None = None

    def config_hash(self):
        blob = json.dumps({"command": self.command, "ensemble": self.ensemble, "params": self.params}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_parser():
    p = _Parser(prog="combsum", description="Large deviations of combinatorial sums.")
    p.add_argument("--version", action="version", version=f"combsum {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("--spec", required=True, help="ensemble spec file (TOML)")
        s.add_argument("--out", help="CSV output path; stdout when omitted")
        return s

    s = add("moments", "B_n, Var S_n, gamma_n and the zone edge")
    s.add_argument("--slack", type=float, default=DEFAULT_SLACK)

    s = add("check", "centering and Bernstein conditions")
    s.add_argument("--D", type=float, default=1.0)
    s.add_argument("--K", type=int, default=20)

    add("exact", "exact law of S_n")

    s = add("mgf", "phi_n(z) through the permanent")
    s.add_argument("--z", type=_complexes, required=True, help="comma-separated z values, e.g. 0,0.5,1+0.5j")

    s = add("saddlepoint", "saddlepoint tilt and tail approximation")
    s.add_argument("--u", type=_floats, required=True)

    for name, help in (("simulate", "naive Monte Carlo tail"), ("is", "tilted importance-sampling tail")):
        s = add(name, help)
        s.add_argument("--u", type=_floats, required=True)
        s.add_argument("--seed", type=int, required=True)
        if name == "simulate":
            s.add_argument("--N", type=int, default=10**6)
            s.add_argument("--workers", type=int, default=None)
        else:
            s.add_argument("--h", type=float, default=None, help="tilt; solved from u when omitted")
            s.add_argument("--burn-in", type=int, default=None, help="transposition proposals; default 50 n^2")
            s.add_argument("--thin", type=int, default=None, help="proposals between draws; default n")
            s.add_argument("--batches", type=int, default=20)
            s.add_argument("--batch-size", type=int, default=50)
            s.add_argument("--chains", type=int, default=256)

    s = add("ratio", "P(S_n >= u sqrt(B_n)) / (1 - Phi(u)) along a size-indexed family")
    s.add_argument("--n", type=_ints, required=True)
    s.add_argument("--u", type=float, required=True)
    s.add_argument("--N", type=int, default=10**6)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--zone-slack", type=float, default=1.0)
    s.add_argument("--no-zone-guard", action="store_true")
    s.add_argument("--workers", type=int, default=None)

    s = add("esseen", "Kolmogorov distance to the normal law along a size-indexed family")
    s.add_argument("--n", type=_ints, required=True)
    s.add_argument("--N", type=int, default=10**6)
    s.add_argument("--seed", type=int, required=True)
    return p


def _validate(args):
    """Range checks done before any computation."""
    d = vars(args)
    if d.get("slack") is not None and not 0 < d["slack"] <= 1:
        raise UsageError("--slack must lie in (0, 1]")
    if d.get("zone_slack") is not None and not 0 < d["zone_slack"] <= 1:
        raise UsageError("--zone-slack must lie in (0, 1]")
    if d.get("K") is not None and d["K"] < 3:
        raise UsageError("--K must be >= 3")
    if d.get("D") is not None and not d["D"] > 0:
        raise UsageError("--D must be positive")
    for key in ("u", "z", "n"):
        if key in d and isinstance(d[key], list) and not d[key]:
            raise UsageError(f"--{key} needs at least one value")
    if args.command == "simulate" and d["N"] < MIN_NAIVE_SAMPLES:
        raise UsageError(f"--N must be >= {MIN_NAIVE_SAMPLES}")
    if args.command in ("ratio", "esseen") and d["N"] < 1:
        raise UsageError("--N must be positive")
    if args.command in ("ratio", "esseen") and min(d["n"]) < 2:
        raise UsageError("--n values must be >= 2")
    if args.command == "is":
        if d["batches"] < 20:
            raise UsageError("--batches must be >= 20")
        for key in ("thin", "batch_size", "chains"):
            if d[key] is not None and d[key] < 1:
                raise UsageError(f"--{key.replace('_', '-')} must be positive")
        if d["h"] is not None and not d["h"] >= 0:
            raise UsageError("--h must be >= 0")
    if d.get("workers") is not None and d["workers"] < 1:
        raise UsageError("--workers must be >= 1")


def _write_csv(path, header, rows, comment=None):
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    text = buf.getvalue()
    if path is None:
        sys.stdout.write(text)
        return
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _say(msg):
    print(msg, file=sys.stderr)


def _metadata(cfg, seed):
    return f"seed={seed} config_hash={cfg.config_hash()} combsum={__version__}"


def _cmd_moments(cfg, args, e):
    s = gamma_n(e, args.slack)
    _write_csv(cfg.out, MomentSummary.CSV_HEADER, [s.csv_row()])
    _say(f"n={s.n} B_n={s.B_n:.6g} var_S={s.var_S:.6g} gamma_n={s.gamma_n:.6g} zone_u_max={s.zone_u_max:.6g}")
    return EX_OK


def _cmd_check(cfg, args, e):
    cen = check_centering(e)
    bern = check_bernstein(e, args.D, args.K)
    text = f"{cen}\n{bern}\n"
    if cfg.out:
        _write_text(cfg.out, text)
    else:
        sys.stdout.write(text)
    return EX_OK if (cen.passed and bern.passed) else EX_CHECK_FAILED


def _write_text(path, text):
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, target)


def _cmd_exact(cfg, args, e):
    law = enumerate_law(e)
    _write_csv(cfg.out, EXACT_HEADER, law.support)
    _say(f"{len(law.values)} atoms, mean={law.mean:.3g}, variance={law.variance:.6g}")
    return EX_OK


def _cmd_mgf(cfg, args, e):
    rows = []
    for z in args.z:
        phi = mgf_exact(e, z)
        rows.append((z.real, z.imag, phi.real, phi.imag))
    _write_csv(cfg.out, MGF_HEADER, rows)
    _say(f"{len(rows)} m.g.f. values")
    return EX_OK


def _cmd_saddlepoint(cfg, args, e):
    rows, skipped = [], []
    for u in args.u:
        try:
            r = solve_saddlepoint(e, u)
        except ZoneExceededError as exc:
            skipped.append((u, str(exc)))
            continue
        st = r.state
        rows.append((u, r.h, st.log_mgf, st.m, st.sigma2, r.tail_approx, r.gauss_tail, r.tail_approx / r.gauss_tail))
    for u, why in skipped:
        _say(f"skipped u={u}: {why}")
    if not rows:
        _say("guard: ZoneExceededError: every u is beyond the reachable tilt range")
        return EX_GUARD
    _write_csv(cfg.out, SADDLEPOINT_HEADER, rows)
    _say(f"{len(rows)} saddlepoints solved")
    return EX_OK


def _cmd_simulate(cfg, args, e):
    workers = args.workers or default_workers()
    rows = [(u,) + naive_tail(e, u, args.N, args.seed, workers).csv_row() for u in args.u]
    _write_csv(cfg.out, TAIL_HEADER, rows, _metadata(cfg, args.seed))
    _say(f"naive tails at {len(rows)} levels, N={args.N}, workers={workers}")
    return EX_OK


def _cmd_is(cfg, args, e):
    n = e.n
    rows = []
    for u in args.u:
        h = args.h if args.h is not None else importance_tilt(e, u)
        chain = TiltedChainConfig(
            h=h,
            burn_in=args.burn_in if args.burn_in is not None else 50 * n * n,
            thin=args.thin if args.thin is not None else n,
            n_batches=args.batches,
            batch_size=args.batch_size,
            seed=args.seed,
            n_chains=args.chains,
        )
        try:
            chain.validate_for(e)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        rows.append((u,) + tilted_is_tail(e, u, chain).csv_row())
    _write_csv(cfg.out, TAIL_HEADER, rows, _metadata(cfg, args.seed))
    _say(f"importance-sampling tails at {len(rows)} levels")
    return EX_OK


def _family(table):
    return lambda n: ensemble_from_table(table, n)


def _cmd_ratio(cfg, args, e):
    slack = None if args.no_zone_guard else args.zone_slack
    workers = args.workers or default_workers()
    rows = ratio_experiment(_family(cfg.ensemble), args.n, args.u, args.N, args.seed, slack, workers)
    for r in rows:
        if r.skipped:
            _say(f"skipped n={r.n}: {r.note}")
    _write_csv(cfg.out, RatioRow.CSV_HEADER, [r.csv_row() for r in rows], _metadata(cfg, args.seed))
    if all(r.skipped for r in rows):
        _say("guard: ZoneExceededError: every row was skipped")
        return EX_GUARD
    _say(", ".join(f"n={r.n}: ratio={r.ratio:.4f}" for r in rows if not r.skipped))
    return EX_OK


def _cmd_esseen(cfg, args, e):
    table = esseen_decay(_family(cfg.ensemble), args.n, args.N, args.seed)
    comment = f"{_metadata(cfg, args.seed)} fitted_C={_fmt(table.fitted_C)}"
    _write_csv(cfg.out, EsseenRow.CSV_HEADER, [r.csv_row() for r in table.rows], comment)
    _say(f"fitted C={table.fitted_C:.4g}; " + ", ".join(f"n={r.n}: KS={r.ks:.3g}" for r in table.rows))
    return EX_OK


COMMANDS = {
    "moments": _cmd_moments,
    "check": _cmd_check,
    "exact": _cmd_exact,
    "mgf": _cmd_mgf,
    "saddlepoint": _cmd_saddlepoint,
    "simulate": _cmd_simulate,
    "is": _cmd_is,
    "ratio": _cmd_ratio,
    "esseen": _cmd_esseen,
}


def run(argv=None) -> int:
    """Parse, validate and dispatch; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        table = read_spec(args.spec)
        sized = args.command in ("ratio", "esseen")
        e = ensemble_from_table(table, args.n[0] if sized else None)
        params = {k: (str(v) if k == "z" else v) for k, v in vars(args).items() if k not in ("spec", "out", "command", "workers")}
        cfg = ExperimentConfig(args.command, args.spec, table, params, args.out)
        return COMMANDS[args.command](cfg, args, e)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except (UsageError, SpecError) as exc:
        _say(f"usage: {exc}")
        return EX_USAGE
    except CombsumError as exc:
        _say(f"guard: {type(exc).__name__}: {exc}")
        return EX_GUARD


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
