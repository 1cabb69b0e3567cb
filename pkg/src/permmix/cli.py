"""Command-line front end.

Every report starts with ``#`` lines recording the toolkit version and the
full configuration, so a file is reproducible from its own header.  The
output path and the thread count are left out of that record: neither may
change a single byte of the report.

Exit codes: 0 success, 1 audit failure, 2 invalid input, 3 size limit
exceeded, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .audits import AUDITS, random_sinkhorn_matrix, run_audits
from .compound import CompoundInstance, regret_gap_mc
from .errors import CapacityError, NumericalError, PermmixError, ValidationError
from .families import KINDS, Discrete, GaussianLoc, Poisson
from .geometry import (
    DiscreteSimplexFamily,
    GaussianLocBall,
    capacity_lower,
    capacity_upper_ratio,
    inequality_audit,
    partition_diameter,
)
from .overlap import build_overlap, structure_residuals, trace_capacity_lb
from .permanent import (
    chi2_exact,
    log1p_chi2_from_overlap,
    mixing_scalar,
    replication_trajectory,
    two_component_log1p_chi2,
)
from .spectrum import diagonal_lower, hessian_det_check, spectral_lower, spectral_upper

log = logging.getLogger("permmix")

EXIT_OK, EXIT_AUDIT, EXIT_INVALID, EXIT_CAPACITY, EXIT_NUMERICAL = 0, 1, 2, 3, 4
CROSS_CHECK_MAX_N = 12
BOUNDS_EXACT_MAX_N = 20
NO_CONFIG = ("out", "threads", "func", "verbose")


# ---------------------------------------------------------------------------
# argument parsing


def parse_grid(text: str) -> list[float]:
    """Comma-separated values; an item ``a:b:k`` expands to k evenly spaced points."""
    try:
        return _parse_grid(text)
    except ValueError as e:
        if isinstance(e, ValidationError):
            raise
        raise ValidationError(f"cannot parse grid {text!r}: {e}") from None


def _parse_grid(text: str) -> list[float]:
    out: list[float] = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            parts = item.split(":")
            if len(parts) != 3:
                raise ValidationError(f"range {item!r} must look like start:stop:count")
            a, b, k = float(parts[0]), float(parts[1]), int(parts[2])
            if k < 1:
                raise ValidationError(f"range {item!r} needs a positive count")
            out.extend(float(v) for v in np.linspace(a, b, k))
        else:
            out.append(float(item))
    if not out:
        raise ValidationError("grid must be nonempty")
    if not all(math.isfinite(v) for v in out):
        raise ValidationError("grid values must be finite")
    return out


def parse_int_grid(text: str) -> list[int]:
    vals = parse_grid(text)
    ints = [int(round(v)) for v in vals]
    if any(abs(v - i) > 1e-9 for v, i in zip(vals, ints)):
        raise ValidationError(f"expected integers, got {text!r}")
    return ints


def build_members(args) -> list:
    """Family members from --family and --theta (or the simplex grid)."""
    fam = args.family
    if fam == "simplex":
        size = args.n if args.n else 20
        return DiscreteSimplexFamily(args.m or 4, args.eps).grid(size, args.seed)
    if not args.theta:
        raise ValidationError(f"--family {fam} needs --theta")
    if fam == "discrete":
        pmfs = [parse_grid(block) for block in args.theta.split(";") if block.strip()]
        return [Discrete(tuple(p)) for p in pmfs]
    if fam not in KINDS or fam == "gaussian-multi":
        raise ValidationError(f"unknown family {fam!r}")
    return [KINDS[fam](v) for v in parse_grid(args.theta)]


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in NO_CONFIG}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def render(rows: Sequence[dict], columns: Sequence[str], args, fmt: str | None = None, extra=None) -> str:
    fmt = fmt or args.format
    cfg = _config(args)
    if fmt == "json":
        doc = {"version": __version__, "config": cfg, "rows": [{c: r.get(c) for c in columns} for r in rows]}
        if extra:
            doc.update(extra)
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write(f"# permmix {__version__}\n")
    buf.write("# config " + json.dumps(_jsonable(cfg), sort_keys=True) + "\n")
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(r.get(c)) for c in columns) + "\n")
    return buf.getvalue()


def emit(text: str, args) -> None:
    if args.out:
        with open(args.out, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_overlap(args) -> int:
    members = build_members(args)
    a = build_overlap(members)
    cols = [f"c{j}" for j in range(a.n)]
    rows = [dict(zip(cols, row)) for row in a.entries]
    emit(render(rows, cols, args, extra={"residuals": structure_residuals(a)}), args)
    return EXIT_OK


def cmd_chi2(args) -> int:
    members = build_members(args)
    a = build_overlap(members)
    l1p = log1p_chi2_from_overlap(a)
    row = dict(n=a.n, chi2=math.expm1(l1p), log1p_chi2=l1p, method="permanent")
    emit(render([row], list(row), args), args)
    return EXIT_OK


def cmd_bounds(args) -> int:
    a = build_overlap(build_members(args))
    exact = log1p_chi2_from_overlap(a) if a.n <= BOUNDS_EXACT_MAX_N else None
    row = dict(
        n=a.n,
        log1p_chi2_exact=exact,
        spectral_upper=spectral_upper(a),
        spectral_lower=spectral_lower(a),
        diagonal_lower=diagonal_lower(a),
        sandwich_ok=None if exact is None else exact <= spectral_upper(a),
    )
    emit(render([row], list(row), args), args)
    return EXIT_OK


def _partition_method(members) -> str:
    return "dp1d" if members[0].order_key is not None else "brute"


def cmd_diameter(args) -> int:
    members = build_members(args)
    ks = [args.k] if args.k else list(range(1, len(members) + 1))
    method = _partition_method(members)
    rows = []
    for k in ks:
        p = partition_diameter(members, k, method=method)
        rows.append(dict(k=k, diameter=p.diameter, blocks="|".join(str(b) for b in p.block_of), method=method))
    emit(render(rows, ["k", "diameter", "blocks", "method"], args), args)
    return EXIT_OK


def cmd_capacity(args) -> int:
    members = build_members(args)
    res = capacity_lower(members)
    a = build_overlap(members)
    upper = None
    if args.family == "simplex":
        upper = capacity_upper_ratio(DiscreteSimplexFamily(args.m or 4, args.eps))
    elif args.family == "gaussian":
        upper = capacity_upper_ratio(GaussianLocBall(max(abs(m.mean) for m in members)))
    trace = trace_capacity_lb(a)
    row = dict(
        n=len(members),
        capacity_lower=res.value,
        uniform_prior=res.uniform_value,
        trace_lb=trace,
        capacity_upper=upper,
        bracket_ok=(trace <= res.value + 1e-12) and (upper is None or res.value <= upper),
    )
    emit(render([row], list(row), args), args)
    return EXIT_OK


def cmd_cheeger(args) -> int:
    members = build_members(args)
    a = build_overlap(members)
    ks = [args.k] if args.k else [k for k in (1, 2, 3) if k <= a.n]
    rows = [inequality_audit(a, members, k).to_dict() for k in ks]
    cols = ["k", "lambda_k", "cheeger_lhs", "rho_k", "cheeger_slack", "cheeger_pass",
            "d1", "rho_5", "combinatorial_rhs", "combinatorial_slack", "combinatorial_pass"]
    emit(render(rows, cols, args), args)
    ok = all(r["cheeger_pass"] and r["combinatorial_pass"] is not False for r in rows)
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_hessian(args) -> int:
    rng = np.random.default_rng(args.seed)
    count = args.samples or 100
    rows = []
    for i in range(count):
        n = args.n if args.n else int(rng.integers(2, 7))
        r = hessian_det_check(random_sinkhorn_matrix(rng, n))
        rows.append(dict(index=i, n=n, lhs=r.lhs, rhs=r.rhs, rel_err=r.rel_err))
    emit(render(rows, ["index", "n", "lhs", "rhs", "rel_err"], args), args)
    return EXIT_OK if all(r["rel_err"] < 1e-8 for r in rows) else EXIT_AUDIT


def _replication_matrix(args) -> np.ndarray:
    if args.lambda2 is not None:
        lam = args.lambda2
        if not 0.0 <= lam < 1.0:
            raise ValidationError("--lambda2 must lie in [0, 1)")
        return np.array([[1 + lam, 1 - lam], [1 - lam, 1 + lam]]) / 2.0
    return np.array(build_overlap(build_members(args)).entries)


def cmd_replication(args) -> int:
    a = _replication_matrix(args)
    ms = parse_int_grid(args.grid) if args.grid else list(range(1, 201))
    tr = replication_trajectory(a, ms)
    rows = []
    running = True
    for i, (m, v) in enumerate(zip(tr.ms, tr.values)):
        if i and v < tr.values[i - 1]:
            running = False
        rel = abs(v - tr.target) / tr.target if tr.target else abs(v)
        rows.append(dict(m=m, chi2=v, target=tr.target, rel_err=rel, nondecreasing_so_far=running))
    emit(render(rows, ["m", "chi2", "target", "rel_err", "nondecreasing_so_far"], args), args)
    return EXIT_OK


def regime_ratio(model: str, sep: float, n: int, log1p: float) -> tuple[int, float | None]:
    """Phase-diagram regime of (sep, n) and log(1 + chi^2) over that regime's rate.

    Gaussian rates: mu^4 (on chi^2 itself), mu^2, mu sqrt(log n), with elbows at
    mu = 1 and mu = sqrt(log n).  Poisson: M^2 (on chi^2), M, sqrt(M log n),
    with elbows at M = 1 and M = log n.  The ratio is a reported constant, not
    a checked quantity.
    """
    ln = math.log(n)
    if sep == 0:
        return 1, None
    if model == "gaussian":
        if sep <= 1:
            return 1, math.expm1(log1p) / sep ** 4
        if sep <= math.sqrt(ln):
            return 2, log1p / sep ** 2
        return 3, log1p / (sep * math.sqrt(ln))
    if sep <= 1:
        return 1, math.expm1(log1p) / sep ** 2
    if sep <= ln:
        return 2, log1p / sep
    return 3, log1p / math.sqrt(sep * ln)


def _sweep(args, model: str, default_grid: str, default_ns: str) -> int:
    seps = parse_grid(args.grid or default_grid)
    ns = sorted(set(parse_int_grid(args.ns or default_ns)))
    if any(n < 2 or n % 2 for n in ns):
        raise ValidationError("two-point sweeps need even n >= 2")
    if any(s < 0 for s in seps):
        raise ValidationError("separations must be >= 0")
    rows = []
    for s in seps:
        f = mixing_scalar(model, s)
        best = -math.inf
        for n in ns:
            v = two_component_log1p_chi2(n // 2, f)
            best = max(best, v)
            regime, ratio = regime_ratio(model, s, n, best)
            row = dict(sep=s, n=n, f=f, log1p_chi2=v, log1p_chi2_max_m_le_n=best,
                       method="closed-form", log1p_chi2_permanent=None, residual=None,
                       regime=regime, regime_ratio=ratio)
            if n <= CROSS_CHECK_MAX_N:
                if model == "gaussian":
                    members = [GaussianLoc(-s)] * (n // 2) + [GaussianLoc(s)] * (n // 2)
                else:
                    members = [Poisson(0.0)] * (n // 2) + [Poisson(s)] * (n // 2)
                p = math.log1p(chi2_exact(members))
                row.update(log1p_chi2_permanent=p, residual=abs(p - v))
            rows.append(row)
    cols = ["sep", "n", "f", "log1p_chi2", "log1p_chi2_max_m_le_n", "method", "log1p_chi2_permanent", "residual",
            "regime", "regime_ratio"]
    emit(render(rows, cols, args), args)
    return EXIT_OK


def cmd_sweep_gaussian(args) -> int:
    return _sweep(args, "gaussian", "0:6:61", "100,10000,1000000")


def cmd_sweep_poisson(args) -> int:
    return _sweep(args, "poisson", "0:10:51", "100,10000,1000000")


def cmd_compound_gap(args) -> int:
    model = args.family if args.family in ("gaussian", "poisson") else "gaussian"
    if args.theta:
        base = parse_grid(args.theta)
    else:
        n = args.n or 4
        base = [float(v) for v in np.linspace(0.0, 1.0, n)]
    hs = parse_grid(args.grid or "0,0.5,1,2,4")
    samples = args.samples or 20000
    rows = []
    for i, h in enumerate(hs):
        if h < 0:
            raise ValidationError("h grid values must be >= 0")
        inst = CompoundInstance(model, tuple(h * b for b in base))
        g = regret_gap_mc(inst, samples, args.seed + i, args.threads)
        rows.append(dict(h=h, n=inst.n, gap=g.mean, std_error=g.std_error, samples=g.samples,
                         aborted=g.aborted, seed=g.seed))
    emit(render(rows, ["h", "n", "gap", "std_error", "samples", "aborted", "seed"], args), args)
    return EXIT_OK


def cmd_verify(args) -> int:
    only = None
    if args.only:
        only = [s.strip() for s in args.only.split(",") if s.strip()]
        unknown = [s for s in only if s not in AUDITS]
        if unknown:
            raise ValidationError(f"unknown audit(s) {unknown}; choose from {sorted(AUDITS)}")
    results = run_audits(args.seed, only, args.perturb, args.threads)
    doc = {
        "version": __version__,
        "config": _config(args),
        "passed": all(r.passed for r in results),
        "audits": {r.name: {"passed": r.passed, "worst_slack": r.worst_slack, "cases": r.cases} for r in results},
    }
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK if doc["passed"] else EXIT_AUDIT


COMMANDS = {
    "overlap": (cmd_overlap, "overlap matrix of a family"),
    "chi2": (cmd_chi2, "exact chi^2 through the permanent"),
    "bounds": (cmd_bounds, "spectral and diagonal bounds on log(1 + chi^2)"),
    "diameter": (cmd_diameter, "Renyi partition diameters"),
    "capacity": (cmd_capacity, "chi^2 capacity bracket on a grid"),
    "cheeger": (cmd_cheeger, "Cheeger-type inequality audit"),
    "hessian-check": (cmd_hessian, "Hessian determinant identity on random matrices"),
    "replication": (cmd_replication, "replicated chi^2 trajectory"),
    "sweep-gaussian": (cmd_sweep_gaussian, "two-point Gaussian sweep over mu and n"),
    "sweep-poisson": (cmd_sweep_poisson, "two-point Poisson sweep over M and n"),
    "compound-gap": (cmd_compound_gap, "Monte Carlo regret gap over an h grid"),
    "verify": (cmd_verify, "run the invariant audits"),
}


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--family", default="gaussian",
                        choices=["gaussian", "poisson", "gaussian-scale", "discrete", "simplex"])
    common.add_argument("--theta", help="member parameters, comma-separated; pmfs separated by ';'")
    common.add_argument("--n", type=_positive, help="family or matrix size")
    common.add_argument("--ns", help="list of n values for sweeps")
    common.add_argument("--k", type=_positive)
    common.add_argument("--m", type=_positive, help="categories of the simplex family")
    common.add_argument("--eps", type=float, default=0.1, help="mass floor of the simplex family")
    common.add_argument("--lambda2", type=float, help="second eigenvalue for a 2x2 replication matrix")
    common.add_argument("--grid", help="values or start:stop:count ranges")
    common.add_argument("--seed", type=_seed, default=0)
    common.add_argument("--samples", type=_positive)
    common.add_argument("--out")
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("--only", help="comma-separated audit names for verify")
    common.add_argument("--perturb", action="store_true", help="verify: corrupt one overlap entry")
    common.add_argument("--threads", type=_positive)
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="permmix", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"permmix {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (fn, help_) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CapacityError as e:
        print(f"permmix: capacity: {e}", file=sys.stderr)
        return EXIT_CAPACITY
    except NumericalError as e:
        print(f"permmix: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PermmixError as e:
        print(f"permmix: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"permmix: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
