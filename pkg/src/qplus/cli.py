"""Command-line entry point: ``qplus <subcommand> ...`` (or ``python -m qplus``).

Exit codes: 0 pass, 1 usage or IO error, 2 property failure, 3 guard exceeded.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from fractions import Fraction
from importlib import metadata
from pathlib import Path

import numpy as np

from . import adversary, audit, protocol
from . import expander as ex
from .csp import brute_force_value, gen_instance, instance_hash, parse_instance, serialize_instance
from .errors import (
    CertificationError,
    GuardExceeded,
    PreconditionViolation,
    PropertyFailure,
    QPlusError,
)
from .regularizer import DEFAULT_D, DEFAULT_N0, regularize
from .verifier import (
    acceptance,
    build_total_op,
    density_prob,
    dump_operator,
    honest_proof,
    load_operator,
    operator_suite,
    validity_prob,
)

EXIT_OK, EXIT_USAGE, EXIT_PROPERTY, EXIT_GUARD = 0, 1, 2, 3
CSV_COLUMNS = ("instance_hash", "N", "R", "q", "kappa", "d", "delta", "mode", "P_yes", "best_sound",
               "gap_bound", "case1_pass", "case2_pass", "case3_pass", "case4_pass")
CSV_SCHEMA_VERSION = 1
PERM_TABLE_LIMIT = 4096


class UsageError(QPlusError):
    pass


# --- reporting ------------------------------------------------------------------------


def _versions() -> dict:
    out = {}
    for name, dist in (("qplus", "artifact"), ("numpy", "numpy"), ("scipy", "scipy"), ("mpmath", "mpmath")):
        try:
            out[name] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[name] = "unknown"
    return out


def _jsonable(x):
    if isinstance(x, Fraction):
        return {"exact": str(x), "float": float(x)}
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


OUTPUT_FLAGS = ("--report", "--out", "--csv", "--witness-out", "--dump-operator")


def _command_key(argv) -> list[str]:
    """argv without output destinations, so reruns to other paths hash alike."""
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in OUTPUT_FLAGS:
            skip = True
            continue
        if tok.split("=", 1)[0] in OUTPUT_FLAGS:
            continue
        out.append(tok)
    return out


def make_report(args, payload: dict, instance=None, params=None, timing: float | None = None) -> str:
    manifest = {
        "command": _command_key(args.argv),
        "seed": getattr(args, "seed", None),
        "instance_hash": instance_hash(instance) if instance is not None else None,
        "params": params.as_dict() if params is not None else None,
        "versions": _versions(),
    }
    payload = _jsonable(payload)
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    doc = {"manifest": manifest, "payload": payload,
           "payload_sha256": hashlib.sha256(body.encode()).hexdigest()}
    if timing is not None:
        doc["timing_seconds"] = round(timing, 3)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(args, text: str) -> None:
    if getattr(args, "report", None):
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _load_instance(path: str):
    return parse_instance(_read(path))


def _parse_assignment(text: str) -> tuple[int, ...]:
    p = Path(text)
    if p.exists():
        text = p.read_text()
    text = text.strip()
    try:
        vals = json.loads(text) if text.startswith("[") else [int(x) for x in text.replace(",", " ").split()]
        return tuple(int(v) for v in vals)
    except (ValueError, TypeError):
        raise UsageError(f"cannot parse assignment {text!r}") from None


def _resolve_delta(raw: str, csp) -> Fraction:
    if raw == "auto":
        val = brute_force_value(csp)[0]
        return val if val < 1 else Fraction(1, 2)
    try:
        return Fraction(raw)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"bad --delta {raw!r}") from None


def _timing(args):
    return time.perf_counter() if getattr(args, "timing", False) else None


def _elapsed(t0):
    return None if t0 is None else time.perf_counter() - t0


# --- subcommands -----------------------------------------------------------------------


def cmd_gen(args) -> int:
    params = {}
    for key in ("N", "R", "q", "sigma", "colors", "graph", "density", "max_value"):
        v = getattr(args, key)
        if v is not None:
            params[key] = v
    g = gen_instance(args.kind, seed=args.seed, **params)
    data = serialize_instance(g.csp)
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.write(data.decode())
    if args.witness_out and g.witness is not None:
        Path(args.witness_out).write_text(json.dumps(list(g.witness)) + "\n")
    if args.report:
        _emit(args, make_report(args, {"kind": args.kind, "witness": g.witness}, g.csp))
    return EXIT_OK


def cmd_regularize(args) -> int:
    csp = _load_instance(args.instance)
    reg = regularize(csp, d=args.d, n0=args.n0, seed=args.seed)
    doc = {
        "instance": json.loads(serialize_instance(csp)),
        "d": reg.d,
        "eta_actual": reg.eta_actual,
        "consistency_count": reg.num_consistency,
        "consistency_edges": [[list(a), list(b)] for a, b in reg.consistency_edges],
        "clusters": [
            {"var": c.var, "kind": c.kind, "size": len(c.vertices), "padded": len(c.padded),
             "cheeger_bound": c.cheeger_bound if np.isfinite(c.cheeger_bound) else None,
             "prime": c.prime}
            for c in reg.clusters
        ],
    }
    if reg.gtilde.n <= PERM_TABLE_LIMIT:
        doc["permutations"] = [t.tolist() for t in reg.perms.tables]
    text = json.dumps(_jsonable(doc), sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_expander(args) -> int:
    t0 = _timing(args)
    if args.kind == "cayley":
        if args.p is None:
            raise UsageError("--p is required for cayley graphs")
        g, perms = ex.build_cayley_expander(args.p, d=args.d or ex.DEFAULT_CAYLEY_DEGREE, seed=args.seed)
        info = {"kind": "cayley", "p": args.p, "group": "PGL(2,p)"}
    else:
        if args.n is None:
            raise UsageError("--n is required for small expanders")
        g = ex.build_small_expander(args.n, args.d or DEFAULT_D, seed=args.seed)
        perms = ex.decompose_permutations(g)
        info = {"kind": "small", "n": args.n}
    bound = ex.cheeger_lower_bound(g)
    ok = perms.reconstructs(g)
    if args.out:
        Path(args.out).write_text(g.to_edge_list())
    payload = {**info, "vertices": g.n, "degree": g.d, "lambda2": ex.second_eigenvalue(g),
               "cheeger_lower_bound": bound, "certified": bound >= ex.CHEEGER_TARGET,
               "reconstruction_exact": ok}
    _emit(args, make_report(args, payload, timing=_elapsed(t0)))
    return EXIT_OK if ok and bound >= ex.CHEEGER_TARGET else EXIT_PROPERTY


def cmd_verify(args) -> int:
    csp = _load_instance(args.instance)
    a = _parse_assignment(args.assignment)
    if len(a) != csp.N:
        raise UsageError(f"assignment has {len(a)} values, instance has N={csp.N}")
    reg = regularize(csp, d=args.d, n0=args.n0, seed=args.seed)
    delta = _resolve_delta(args.delta, csp)
    params = protocol.params_for(reg, delta, mode=args.mode)
    ops = operator_suite(reg, params)
    psi = honest_proof(reg, a)
    probs = {name: acceptance(op, psi) for name, op in ops.items()}
    probs["density_direct"] = density_prob(psi)
    probs["validity_direct"] = validity_prob(psi)
    satisfied = all(c.satisfied_by([a[v] for v in c.vars]) for c in csp.constraints)
    payload = {"assignment": a, "satisfying": satisfied, "probabilities": probs,
               "P_yes": params.P_yes, "matches_P_yes": probs["total"] == params.P_yes}
    if args.dump_operator:
        Path(args.dump_operator).write_text(dump_operator(ops[args.dump_label]))
    _emit(args, make_report(args, payload, csp, params))
    if satisfied and not payload["matches_P_yes"]:
        return EXIT_PROPERTY
    return EXIT_OK


def cmd_attack(args) -> int:
    t0 = _timing(args)
    instance = params = None
    if args.operator:
        op = load_operator(_read(args.operator))
    elif args.instance:
        instance = _load_instance(args.instance)
        reg = regularize(instance, d=args.d, n0=args.n0, seed=args.seed)
        params = protocol.params_for(reg, _resolve_delta(args.delta, instance), mode=args.mode)
        op = build_total_op(reg, params)
    else:
        raise UsageError("one of --operator or --instance is required")
    payload = {"dim": op.dim}
    if args.method in ("exact", "both"):
        payload["exact"] = adversary.nonneg_max_exact(op).as_dict()
    if args.method in ("heuristic", "both"):
        payload["heuristic"] = adversary.nonneg_max_heuristic(
            op, restarts=args.restarts, seed=args.seed, method=args.heuristic).as_dict()
    status = EXIT_OK
    if args.method == "both":
        diff = payload["exact"]["best_value"] - payload["heuristic"]["best_value"]
        payload["agreement"] = {"difference": diff, "within_1e-7": abs(diff) <= 1e-7}
        if diff < -1e-9:
            status = EXIT_PROPERTY  # heuristic beat the exact optimum
    _emit(args, make_report(args, payload, instance, params, timing=_elapsed(t0)))
    return status


def _case_pass(tallies: dict, c: int) -> str:
    t = tallies[f"case{c}"]
    if t["count"] == 0:
        return ""
    return "true" if t["passed"] == t["count"] else "false"


def cmd_end_to_end(args) -> int:
    """regularize -> operators -> completeness (if satisfiable) -> soundness (if delta-sound)."""
    t0 = _timing(args)
    csp = _load_instance(args.instance)
    val, witness = brute_force_value(csp)
    delta = _resolve_delta(args.delta, csp)
    reg = regularize(csp, d=args.d, n0=args.n0, seed=args.seed)
    params = protocol.params_for(reg, delta, mode=args.mode)
    payload: dict = {"val": val, "delta": delta, "eta_actual": reg.eta_actual,
                     "mode": params.mode, "paper_strict": params.mode == "paper-strict"}
    row = {c: "" for c in CSV_COLUMNS}
    row.update(instance_hash=instance_hash(csp), N=csp.N, R=csp.R, q=csp.q, kappa=csp.kappa, d=reg.d,
               delta=str(delta), mode=params.mode, P_yes=str(params.P_yes), gap_bound=str(params.gap))
    sub = args.action
    if sub in ("complete", "run") and val == 1:
        a = _parse_assignment(args.assignment) if args.assignment else witness
        payload["completeness"] = {"assignment": a, "acceptance": protocol.run_completeness(reg, a, params)}
    elif sub == "complete":
        raise PreconditionViolation(f"instance is not satisfiable (val = {val})")
    if sub in ("sound", "run") and val <= delta:
        rep = protocol.run_soundness_search(reg, params, budget=args.restarts, seed=args.seed)
        payload["soundness"] = rep.as_dict()
        row["best_sound"] = repr(rep.best_value)
        for c in (1, 2, 3, 4):
            row[f"case{c}_pass"] = _case_pass(rep.case_tallies, c)
    elif sub == "sound":
        raise PreconditionViolation(f"instance is not delta-sound (val = {val} > delta = {delta})")
    payload["csv_row"] = row
    payload["csv_schema_version"] = CSV_SCHEMA_VERSION
    if args.csv:
        new = not Path(args.csv).exists()
        with open(args.csv, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            if new:
                w.writeheader()
            w.writerow(row)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        _emit(args, buf.getvalue())
    else:
        _emit(args, make_report(args, payload, csp, params, timing=_elapsed(t0)))
    return EXIT_OK


def cmd_audit_lemmas(args) -> int:
    results = audit.run_lemma_audit(args.samples, args.seed, corrupt=args.corrupt_operator)
    payload = {"suites": [r.as_dict() for r in results], "all_passed": all(r.passed for r in results)}
    _emit(args, make_report(args, payload))
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} samples={r.samples} worst_margin={r.worst_margin:.3e}",
              file=sys.stderr)
    return EXIT_OK if payload["all_passed"] else EXIT_PROPERTY


# --- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--report", help="write the JSON report here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--timing", action="store_true", help="add wall-clock timing to the report")

    inst = argparse.ArgumentParser(add_help=False)
    inst.add_argument("--d", type=int, default=DEFAULT_D)
    inst.add_argument("--n0", type=int, default=DEFAULT_N0)
    inst.add_argument("--delta", default="1/2", help="rational soundness parameter, or 'auto' (= val)")
    inst.add_argument("--mode", choices=protocol.MODES, default="paper-strict")

    p = argparse.ArgumentParser(prog="qplus", description="Nonnegative-amplitude verifier toolkit")
    subs = p.add_subparsers(dest="command", required=True)

    g = subs.add_parser("gen", parents=[common], help="generate a constraint system")
    g.add_argument("--kind", required=True,
                   choices=("planted-satisfiable", "random-unsatisfiable", "graph-coloring"))
    for key in ("N", "R", "q", "sigma", "colors"):
        g.add_argument(f"--{key}", type=int)
    g.add_argument("--graph")
    g.add_argument("--density", type=float)
    g.add_argument("--max-value", dest="max_value")
    g.add_argument("--out")
    g.add_argument("--witness-out")
    g.set_defaults(func=cmd_gen)

    r = subs.add_parser("regularize", parents=[common], help="add expander consistency constraints")
    r.add_argument("--instance", required=True)
    r.add_argument("--d", type=int, default=DEFAULT_D)
    r.add_argument("--n0", type=int, default=DEFAULT_N0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_regularize)

    e = subs.add_parser("expander", parents=[common], help="build and certify an expander")
    e.add_argument("--kind", choices=("cayley", "small"), default="cayley")
    e.add_argument("--p", type=int)
    e.add_argument("--n", type=int)
    e.add_argument("--d", type=int)
    e.add_argument("--out", help="edge-list output path")
    e.set_defaults(func=cmd_expander)

    v = subs.add_parser("verify", parents=[common, inst], help="acceptance of an honest proof")
    v.add_argument("--instance", required=True)
    v.add_argument("--assignment", required=True, help="JSON list, comma list, or file")
    v.add_argument("--dump-operator")
    v.add_argument("--dump-label", default="total")
    v.set_defaults(func=cmd_verify)

    a = subs.add_parser("attack", parents=[common, inst], help="maximize acceptance over nonnegative proofs")
    a.add_argument("--operator")
    a.add_argument("--instance")
    a.add_argument("--method", choices=("exact", "heuristic", "both"), default="both")
    a.add_argument("--heuristic", choices=("projected-gradient", "multiplicative"), default="projected-gradient")
    a.add_argument("--restarts", type=int, default=64)
    a.set_defaults(func=cmd_attack)

    pr = subs.add_parser("protocol", parents=[common, inst], help="completeness / soundness experiments")
    pr.add_argument("action", choices=("complete", "sound", "run"))
    pr.add_argument("--instance", required=True)
    pr.add_argument("--assignment")
    pr.add_argument("--restarts", type=int, default=64)
    pr.add_argument("--csv", help="append the summary row to this CSV file")
    pr.set_defaults(func=cmd_end_to_end)

    au = subs.add_parser("audit", parents=[common], help="sampled lemma suites")
    au.add_argument("--samples", type=int, default=1000)
    au.add_argument("--corrupt-operator", action="store_true", help=argparse.SUPPRESS)
    au.set_defaults(func=cmd_audit_lemmas)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    args.argv = argv
    try:
        if getattr(args, "samples", 1) < 1:
            raise UsageError("--samples must be at least 1")
        return args.func(args)
    except GuardExceeded as exc:
        print(f"error: guard exceeded: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (PropertyFailure, CertificationError) as exc:
        print(f"error: property failure: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except PreconditionViolation as exc:
        print(f"error: precondition: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QPlusError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
