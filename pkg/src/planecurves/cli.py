"""Command-line front end.

    planecurves search    --d 30 [--kappa 19]
    planecurves check-db  --d 30 [--e .. --components ..] [--seed 1]
    planecurves check-cov --d 19 [--seed 1]
    planecurves table     [--from 1] --to 48 [--verify]

Exit codes: 0 PASS or informational, 2 INCONCLUSIVE / no candidate,
3 invalid input, 4 resource exhaustion.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import sympy

from . import covariants, genericity
from .ffcore import DEFAULT_PRIME, BadPrime, check_admissible, first_admissible, prime_ladder
from .projops import chi_poly
from .ranklab import CorruptCheckpoint, ResourceError
from .rep import DEFAULT_KAPPA, Candidate, candidates_to_json, search_candidates

log = logging.getLogger("planecurves")

EXIT_OK = 0
EXIT_INCONCLUSIVE = 2
EXIT_INVALID = 3
EXIT_RESOURCE = 4

CHECKPOINT_ENV = "PLANECURVES_CHECKPOINT_DIR"
TIMING_KEYS = ("wallSeconds", "stageSeconds")  # fields that may differ between identical runs


# ---------------------------------------------------------------------------
# table


@dataclass
class TableRow:
    d: int
    status: str
    method: str | None
    reference: str | None
    certificate: str | None = None

    def to_json(self) -> dict:
        out = {"d": self.d, "status": self.status, "method": self.method, "reference": self.reference}
        if self.certificate is not None:
            out["certificate"] = self.certificate
        return out


def _table_data() -> dict:
    return json.loads(resources.files("planecurves").joinpath("data/table1.json").read_text())


def table_rows(lo: int, hi: int) -> list[TableRow]:
    if lo < 1 or hi < lo:
        raise ValueError(f"bad degree range {lo}..{hi}")
    data = _table_data()
    explicit = {r["d"]: r for r in data["explicit"]}
    exceptions = {r["d"]: r for r in data["exceptions"]}
    rows = []
    for d in range(lo, hi + 1):
        if d in explicit:
            r = explicit[d]
        elif d in exceptions:
            r = exceptions[d]
        elif d >= data["from"]:
            r = dict(data["byResidueMod3"][str(d % 3)], d=d)
        else:
            raise ValueError(f"no table entry for d = {d}")
        rows.append(TableRow(d, r["status"], r["method"], r["reference"]))
    return rows


def render_table(rows: list[TableRow]) -> str:
    lines = [f"{'d':>4}  {'status':<9} {'method':<14} reference"]
    for r in rows:
        lines.append(f"{r.d:>4}  {r.status:<9} {r.method or '-':<14} {r.certificate or r.reference or '-'}")
    unknown = [r.d for r in rows if r.status == "unknown"]
    lines.append("unknown: {" + ",".join(str(d) for d in unknown) + "}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands


def _emit(obj, args) -> None:
    text = json.dumps(obj, indent=2)
    print(text)
    if getattr(args, "output", None):
        Path(args.output).write_text(text + "\n")


def _pick_candidate(args) -> Candidate | None:
    if args.e is not None or args.components is not None:
        if args.e is None or args.components is None:
            raise ValueError("--e and --components must be given together")
        comps = [int(x) for x in args.components.split(",") if x.strip()]
        cand = Candidate.build(args.d, args.e, comps, args.kappa)
        cand.validate()
        return cand
    found = search_candidates(args.d, args.kappa)
    return found[0] if found else None


def cmd_search(args) -> int:
    print(candidates_to_json(search_candidates(args.d, args.kappa)))
    if args.output:
        Path(args.output).write_text(candidates_to_json(search_candidates(args.d, args.kappa)) + "\n")
    return EXIT_OK


def run_db(args) -> tuple[dict, int]:
    cand = _pick_candidate(args)
    if cand is None:
        return {"d": args.d, "kappa": args.kappa, "status": "NO_CANDIDATE"}, EXIT_INCONCLUSIVE
    prime = args.prime
    chi = chi_poly(cand.e, cand.d, cand.components)
    try:
        check_admissible(chi, prime)
    except BadPrime as exc:
        # a composite or too-small prime is a user error; a prime hitting a denominator is not
        if prime <= cand.d or not sympy.isprime(prime):
            raise
        # nearest primes below first, then above, since small primes may all be too small
        above = [int(sympy.nextprime(prime, i)) for i in range(1, 17)]
        prime = first_admissible(chi, prime_ladder(prime)[1:] + above)
        log.warning("prime %d rejected (%s); using %d", args.prime, exc, prime)
    inst = genericity.GenericityInstance(
        cand,
        p=prime,
        seed=args.seed,
        n_points=args.n_points,
        t_terms=args.t_terms,
        max_retries=args.max_retries,
        workers=args.threads,
        checkpoint_dir=args.checkpoint_dir,
    )
    verdict = genericity.run_check(inst)
    code = EXIT_OK if verdict.status == genericity.PASS else EXIT_INCONCLUSIVE
    return verdict.to_json(), code


def cmd_check_db(args) -> int:
    obj, code = run_db(args)
    _emit(obj, args)
    return code


def run_cov(args) -> tuple[dict, int]:
    rep = covariants.span_check(
        args.d, prime=args.prime, seed=args.seed, samples=args.samples, g_terms=args.g_terms, workers=args.threads
    )
    return rep.to_json(), EXIT_OK if rep.status == covariants.PASS else EXIT_INCONCLUSIVE


def cmd_check_cov(args) -> int:
    obj, code = run_cov(args)
    _emit(obj, args)
    return code


def cmd_table(args) -> int:
    rows = table_rows(args.from_, args.to)
    code = EXIT_OK
    if args.verify:
        outdir = Path(args.checkpoint_dir or ".") / "certificates"
        outdir.mkdir(parents=True, exist_ok=True)
        for r in rows:
            if r.method not in ("double-bundle", "covariant-S", "covariant-T"):
                continue
            sub = argparse.Namespace(**vars(args))
            sub.d = r.d
            if r.method == "double-bundle":
                sub.e = sub.components = None
                obj, c = run_db(sub)
            else:
                obj, c = run_cov(sub)
            path = outdir / f"{r.method}-d{r.d}.json"
            path.write_text(json.dumps(obj, indent=2) + "\n")
            r.certificate = f"{obj['status']} {path}"
            code = max(code, c)
    sys.stdout.write(render_table(rows))
    if args.output:
        Path(args.output).write_text(json.dumps([r.to_json() for r in rows], indent=2) + "\n")
    return code


# ---------------------------------------------------------------------------
# parser


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _nonneg(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="planecurves", description="Rationality certificates for moduli of plane curves.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log one line per pipeline stage")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--prime", type=int, default=DEFAULT_PRIME)
    common.add_argument("--seed", type=_nonneg, default=0)
    common.add_argument("--threads", type=_positive, default=1)
    common.add_argument("--checkpoint-dir", default=os.environ.get(CHECKPOINT_ENV))
    common.add_argument("--output", help="also write the JSON report here")
    common.add_argument("--kappa", type=_positive, default=DEFAULT_KAPPA)

    s = sub.add_parser("search", help="list double-bundle candidates for degree d")
    s.add_argument("--d", type=_positive, required=True)
    s.add_argument("--kappa", type=_positive, default=DEFAULT_KAPPA)
    s.add_argument("--output")
    s.set_defaults(func=cmd_search)

    db = sub.add_parser("check-db", parents=[common], help="run the double-bundle genericity check")
    db.add_argument("--d", type=_positive, required=True)
    db.add_argument("--e", type=_nonneg)
    db.add_argument("--components", help="comma-separated component indices")
    db.add_argument("--n-points", type=_positive)
    db.add_argument("--t-terms", type=_nonneg)
    db.add_argument("--max-retries", type=_nonneg, default=genericity.DEFAULT_MAX_RETRIES)
    db.set_defaults(func=cmd_check_db)

    cv = sub.add_parser("check-cov", parents=[common], help="run the covariant spanning check")
    cv.add_argument("--d", type=_positive, required=True)
    cv.add_argument("--samples", type=_positive)
    cv.add_argument("--g-terms", type=_positive, default=covariants.DEFAULT_G_TERMS)
    cv.set_defaults(func=cmd_check_cov)

    tb = sub.add_parser("table", parents=[common], help="print the table of known results")
    tb.add_argument("--from", dest="from_", type=_positive, default=1)
    tb.add_argument("--to", type=_positive, default=60)
    tb.add_argument("--verify", action="store_true", help="re-run live certificates for implemented methods")
    tb.add_argument("--samples", type=_positive)
    tb.add_argument("--g-terms", type=_positive, default=covariants.DEFAULT_G_TERMS)
    tb.add_argument("--n-points", type=_positive)
    tb.add_argument("--t-terms", type=_nonneg)
    tb.add_argument("--max-retries", type=_nonneg, default=genericity.DEFAULT_MAX_RETRIES)
    tb.set_defaults(func=cmd_table)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ResourceError, MemoryError) as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ValueError, IndexError, BadPrime, CorruptCheckpoint) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
