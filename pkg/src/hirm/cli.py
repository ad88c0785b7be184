"""Command-line front end: inference runs, queries, co-clustering export,
benchmark conversion, synthetic generation, and exact-enumeration reports.

All randomness flows from --seed; chain c uses the derived stream (seed, c),
so runs are reproducible regardless of worker count. Set HIRM_LOG=debug to
enable state-invariant audits after every scan.
"""

import argparse
import csv
import glob
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from .hirm import HirmState
from .oracle import enumerate_posterior
from .query import Ensemble, ensemble_logp, parse_query_rows, simulate
from .schema import load_observations, parse_schema
from .synth import rows_to_csv, sample_dataset
from .util import make_rng


def _read(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_store(args):
    system = parse_schema(_read(args.schema))
    return load_observations(system, _read(args.obs))


def _state_paths(patterns):
    paths = []
    for pattern in patterns:
        hits = sorted(glob.glob(pattern))
        if os.path.isdir(pattern):
            hits = sorted(glob.glob(os.path.join(pattern, "*.json")))
        if not hits and os.path.exists(pattern):
            hits = [pattern]
        paths.extend(hits)
    if not paths:
        raise FileNotFoundError(f"no state files match {patterns!r}")
    return paths


def _check_dpmm(system):
    domains = {d for rel in system.relations for d in rel.domains}
    if len(domains) != 1 or any(rel.arity != 1 for rel in system.relations):
        raise ValueError(
            "dpmm mode requires all relations to be unary over one shared domain"
        )


def _run_chain(params):
    """One chain: scans, per-scan log lines, periodic checkpoints.

    Standalone function (not a closure) so worker processes can pickle it;
    each chain reloads its inputs to stay independent of the parent.
    """
    system = parse_schema(_read(params["schema"]))
    store = load_observations(system, _read(params["obs"]))
    mode = params["mode"]
    if mode == "dpmm":
        _check_dpmm(system)
    internal_mode = "irm" if mode in ("irm", "dpmm") else "hirm"
    chain = params["chain"]
    state = HirmState.from_prior(
        store,
        rng=make_rng([params["seed"], chain]),
        seed=params["seed"],
        mode=internal_mode,
        gamma0=params["gamma0"],
        entity_gamma=params["gamma"],
        hyper_kernel=not params["no_hyper_kernel"],
    )
    out = params["out"]
    every = params["checkpoint_every"]
    log_lines = []
    written = []
    for scan in range(1, params["iters"] + 1):
        t0 = time.perf_counter()
        state.gibbs_scan()
        wall_ms = int((time.perf_counter() - t0) * 1000)
        log_lines.append(
            f"{scan}\t{chain}\t{state.logp_full()!r}\t{state.n_blocks()}\t{wall_ms}"
        )
        if (every and scan % every == 0) or scan == params["iters"]:
            path = os.path.join(out, f"chain{chain:02d}_scan{scan:06d}.json")
            _write(path, state.to_json())
            written.append(path)
    _write(os.path.join(out, f"chain{chain:02d}.log"), "\n".join(log_lines) + "\n")
    return written


def cmd_infer(args):
    os.makedirs(args.out, exist_ok=True)
    params = [
        {
            "schema": args.schema,
            "obs": args.obs,
            "mode": args.mode,
            "iters": args.iters,
            "seed": args.seed,
            "gamma0": args.gamma0,
            "gamma": args.gamma,
            "no_hyper_kernel": args.no_hyper_kernel,
            "checkpoint_every": args.checkpoint_every,
            "out": args.out,
            "chain": chain,
        }
        for chain in range(args.chains)
    ]
    if args.mode == "dpmm":
        _check_dpmm(parse_schema(_read(args.schema)))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            for _ in pool.map(_run_chain, params):
                pass
    else:
        for p in params:
            _run_chain(p)
    return 0


def cmd_logp(args):
    store = _load_store(args)
    ensemble = Ensemble.from_files(store, _state_paths(args.states))
    rows = parse_query_rows(store, _read(args.query))
    out = sys.stdout if args.out is None else open(
        args.out, "w", encoding="utf-8", newline="\n"
    )
    try:
        if rows:
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(["row", "logp"])
            total = 0.0
            for i, row in enumerate(rows):
                lp = ensemble_logp(ensemble, row)
                total += lp
                writer.writerow([i, repr(lp)])
            writer.writerow(["mean", repr(total / len(rows))])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_sample(args):
    store = _load_store(args)
    with open(args.state, "r", encoding="utf-8") as fh:
        state = HirmState.from_json(store, fh.read())
    rng = make_rng(args.seed)
    targets = []
    for line in _read(args.targets).splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in next(csv.reader([line]))]
        targets.append((parts[0], tuple(parts[1:])))
    out = sys.stdout if args.out is None else open(
        args.out, "w", encoding="utf-8", newline="\n"
    )
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["row", "draw", "value"])
        for i, (rel, tokens) in enumerate(targets):
            for j in range(args.n):
                writer.writerow([i, j, simulate(state, rel, tokens, rng)])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_cocluster(args):
    from .query import cocluster_matrix

    store = _load_store(args)
    ensemble = Ensemble.from_files(store, _state_paths(args.states))
    names, mat = cocluster_matrix(ensemble, args.domain, args.context)
    out = sys.stdout if args.out is None else open(
        args.out, "w", encoding="utf-8", newline="\n"
    )
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["entity", *names])
        for name, row in zip(names, mat):
            writer.writerow([name, *(repr(float(v)) for v in row)])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_synth(args):
    config = json.loads(_read(args.config))
    if args.seed is not None:
        config["seed"] = args.seed
    schema_text, rows, truth = sample_dataset(config)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "schema.txt"), schema_text)
    _write(os.path.join(args.out, "observations.csv"), rows_to_csv(rows))
    _write(
        os.path.join(args.out, "truth.json"),
        json.dumps(truth, indent=2) + "\n",
    )
    return 0


def cmd_convert(args):
    """Binary-row benchmark text (one comma-separated 0/1 row per line) to
    schema + observations, one unary relation per column."""
    text = _read(args.data)
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError(f"{args.data} contains no rows")
    first = rows[0].replace(" ", ",").split(",")
    n_cols = len([tok for tok in first if tok != ""])
    os.makedirs(args.out, exist_ok=True)
    name = args.name or os.path.splitext(os.path.basename(args.data))[0]

    schema_lines = [f"bernoulli col{j} {args.domain}" for j in range(n_cols)]
    _write(os.path.join(args.out, f"{name}.schema"), "\n".join(schema_lines) + "\n")

    if args.as_queries:
        stanzas = []
        for i, line in enumerate(rows):
            values = [tok for tok in line.replace(" ", ",").split(",") if tok != ""]
            if len(values) != n_cols:
                raise ValueError(f"row {i} has {len(values)} columns, expected {n_cols}")
            stanzas.append(
                "\n".join(f"col{j},{int(v)},~row{i}" for j, v in enumerate(values))
            )
        _write(os.path.join(args.out, f"{name}.queries"), "\n\n".join(stanzas) + "\n")
    else:
        out_rows = []
        for i, line in enumerate(rows):
            values = [tok for tok in line.replace(" ", ",").split(",") if tok != ""]
            if len(values) != n_cols:
                raise ValueError(f"row {i} has {len(values)} columns, expected {n_cols}")
            for j, v in enumerate(values):
                out_rows.append(f"col{j},{int(v)},row{i}")
        _write(os.path.join(args.out, f"{name}.obs"), "\n".join(out_rows) + "\n")
    return 0


def cmd_oracle(args):
    store = _load_store(args)
    hypers = {}
    for sig in store.system.relations:
        if sig.kind == "bernoulli":
            hypers[sig.name] = {"alpha": args.alpha, "beta": args.beta}
        elif sig.kind == "categorical":
            hypers[sig.name] = {"delta": args.delta}
    report = enumerate_posterior(
        store, gamma0=args.gamma0, gamma=args.gamma, likelihood_hypers=hypers
    )
    out = sys.stdout if args.out is None else open(
        args.out, "w", encoding="utf-8", newline="\n"
    )
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["partition", "probability"])
        for label, p in report.as_rows():
            writer.writerow([label, repr(p)])
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"log evidence: {report.log_evidence!r}", file=sys.stderr)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hirm",
        description="Hierarchical infinite relational model: inference and queries",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p):
        p.add_argument("--schema", required=True, help="schema file")
        p.add_argument("--obs", required=True, help="observation CSV file")

    p = sub.add_parser("infer", help="run Gibbs-sampling inference chains")
    add_data_args(p)
    p.add_argument("--mode", choices=["hirm", "irm", "dpmm"], default="hirm")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="also checkpoint every N scans (final always written)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-hyper-kernel", action="store_true",
                   help="freeze hyperparameters")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel chain workers (results identical either way)")
    p.add_argument("--gamma0", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("logp", help="held-out log density of query rows")
    add_data_args(p)
    p.add_argument("--states", nargs="+", required=True,
                   help="state files, globs, or directories")
    p.add_argument("--query", required=True, help="query file")
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.set_defaults(fn=cmd_logp)

    p = sub.add_parser("sample", help="simulate relation values from a state")
    add_data_args(p)
    p.add_argument("--state", required=True, help="state file")
    p.add_argument("--targets", required=True,
                   help="CSV of `relation,entity,...` rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1, help="draws per target")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("cocluster", help="posterior co-clustering matrix")
    add_data_args(p)
    p.add_argument("--states", nargs="+", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--context", required=True,
                   help="relation whose block defines the clustering")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_cocluster)

    p = sub.add_parser("synth", help="forward-sample a synthetic dataset")
    p.add_argument("--config", required=True, help="generator config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("convert", help="binary-row benchmark data to schema/obs")
    p.add_argument("--data", required=True, help="text file of 0/1 rows")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", default=None, help="output file prefix")
    p.add_argument("--domain", default="Obj", help="object domain name")
    p.add_argument("--as-queries", action="store_true",
                   help="emit fresh-entity query stanzas instead of observations")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("oracle", help="exact posterior by enumeration")
    add_data_args(p)
    p.add_argument("--gamma0", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_oracle)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # surface I/O and validation errors with exit 1
        print(f"hirm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
