"""Command-line interface: one binary, seven subcommands.

    gen         sample a model (or load one) and generate a sequence
    compress    encode a sequence file into a framed stream
    decompress  invert compress
    cluster     MDL-cluster a memory manifest
    classify    assign a sequence to one of the stored clusters
    bounds      closed-form redundancy / gain bound table (CSV)
    experiment  randomized gain measurements (CSV or JSON report)

Exit codes: 0 success, 1 domain error (one-line diagnostic on stderr),
2 usage error. Output files are written atomically.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import bounds as bnd
from . import io as mio
from .codec import MODE_UCOMPCM, MODES, CodeStream, decode, encode
from .errors import InvalidParameterError, MaucError
from .experiment import ExperimentConfig, emit_report, reports_to_csv, run_experiment
from .mdl_cluster import classify as mdl_classify
from .mdl_cluster import initial_partition, refine, state_from_assignment
from .source_model import generate, sample_jeffreys


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="mauc", description=__doc__,
                                  formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a sequence from a Markov model")
    p.add_argument("--k", type=int, help="alphabet size (when sampling a model)")
    p.add_argument("--order", type=int, default=1, help="Markov order (default 1)")
    p.add_argument("--n", type=int, required=True, help="sequence length")
    p.add_argument("--model", help="load this model JSON instead of sampling")
    p.add_argument("--model-out", help="write the model used as JSON")
    p.add_argument("--out", required=True, help="output sequence file (1 byte/symbol)")
    _add_seed(p)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("compress", help="compress a sequence file")
    p.add_argument("--mode", choices=MODES, default="ucomp")
    p.add_argument("--depth", "--model-depth", dest="depth", type=int, default=3,
                   help="context tree depth (default 3)")
    p.add_argument("--k", type=int, default=256, help="alphabet size (default 256)")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--memory", help="memory manifest JSON (memory modes)")
    p.add_argument("--cluster", type=int,
                   help="cluster id; picks manifest entries with this label")
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("decompress", help="decompress a stream file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--memory", help="memory manifest JSON (memory modes)")
    p.set_defaults(func=_cmd_decompress)

    p = sub.add_parser("cluster", help="MDL-cluster a memory manifest")
    p.add_argument("--memory", required=True, help="memory manifest JSON")
    p.add_argument("--clusters", "-K", dest="K", type=int, required=True)
    p.add_argument("--k", type=int, default=256, help="alphabet size (default 256)")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--out", required=True, help="assignment JSON output")
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("classify", help="assign a sequence to a stored cluster")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--memory", required=True, help="memory manifest JSON")
    p.add_argument("--assignment", required=True, help="assignment JSON from `cluster`")
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--depth", type=int, default=3)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("bounds", help="closed-form bound table (CSV)")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--order", type=int, default=0)
    p.add_argument("--d", type=int, help="override the parameter count")
    p.add_argument("--logC", type=float, help="override the Jeffreys integral (log2)")
    p.add_argument("--n", required=True, help="sequence length(s), comma separated")
    p.add_argument("--m", default="inf", help="memory length(s), comma separated or inf")
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--rate", type=float, required=True, help="entropy rate, bits/symbol")
    p.add_argument("--p-z", type=float, default=1.0)
    p.add_argument("--h-p", type=float, default=0.0)
    p.add_argument("--kl-rate", type=float, default=0.0)
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("experiment", help="randomized gain measurement sweep")
    p.add_argument("--config", help="JSON config (flags override it)")
    p.add_argument("--k", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--num-sources", "-K", dest="num_sources", type=int)
    p.add_argument("--n", help="sequence length(s), comma separated")
    p.add_argument("--memory-count", "-T", dest="num_memory", help="memory sequence count(s)")
    p.add_argument("--memory-length", help="memory sequence length(s)")
    p.add_argument("--depth", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--schemes", help="comma separated subset of " + ",".join(
        ("ucomp", "ucompm", "ucompcm", "ucompmdl")))
    p.add_argument("--quantile-mode", choices=("pooled", "per_source"))
    p.add_argument("--payload-bits", action="store_true",
                   help="measure payload bits instead of ideal codelengths")
    p.add_argument("--min-kl-rate", type=float,
                   help="resample sources until this pairwise separation holds")
    p.add_argument("--workers", type=int,
                   help="parallel trial workers (default $MAUC_WORKERS or 1)")
    p.add_argument("--out", help="report file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=_cmd_experiment)
    return top


def _cmd_gen(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.model:
        model = mio.load_model(args.model)
    else:
        if args.k is None:
            raise InvalidParameterError("gen needs --k when no --model is given")
        model = sample_jeffreys(args.k, args.order, rng)
    x = generate(model, args.n, rng)
    if args.model_out:
        mio.save_model(model, args.model_out)
    mio.save_sequence(x, args.out)
    return 0


def _load_memory_for_mode(mode: str, manifest: str | None, cluster: int | None):
    """Returns the memory sequences priming this stream (cluster-filtered for
    clustered mode)."""
    if mode == "ucomp":
        return None
    if manifest is None:
        raise InvalidParameterError(f"mode {mode!r} requires --memory")
    store = mio.load_manifest(manifest)
    if mode == MODE_UCOMPCM:
        if cluster is None:
            raise InvalidParameterError("clustered mode requires --cluster")
        if store.labels is None:
            raise InvalidParameterError("clustered mode requires labels in the manifest")
        keep = [i for i in range(store.T) if int(store.labels[i]) == cluster]
        return store.subset(keep)
    return store


def _cmd_compress(args) -> int:
    x = mio.load_sequence(args.infile)
    memory = _load_memory_for_mode(args.mode, args.memory, args.cluster)
    stream = encode(args.mode, x, memory, k=args.k, depth=args.depth,
                    cluster_id=args.cluster if args.mode == MODE_UCOMPCM else None)
    mio.save_stream(stream.to_bytes(), args.out)
    return 0


def _cmd_decompress(args) -> int:
    stream = CodeStream.from_bytes(mio.load_stream(args.infile))
    memory = _load_memory_for_mode(stream.mode, args.memory, stream.cluster_id)
    x = decode(stream, memory)
    mio.save_sequence(x, args.out)
    return 0


def _cmd_cluster(args) -> int:
    store = mio.load_manifest(args.memory)
    state = initial_partition(store, args.K, args.k, args.depth)
    state = refine(store, state, args.k, args.depth, max_iters=args.max_iters)
    mio.save_assignment(state.K, state.assignment, state.total_dl, args.out)
    return 0


def _cmd_classify(args) -> int:
    store = mio.load_manifest(args.memory)
    K, assignment, _total = mio.load_assignment(args.assignment)
    state = state_from_assignment(store, K, assignment, args.k, args.depth)
    x = mio.load_sequence(args.infile)
    print(mdl_classify(x, store, state, args.k, args.depth))
    return 0


_BOUNDS_COLUMNS = ("n", "m", "d", "k", "order", "eps", "rate", "p_z", "H_p",
                   "Rbar", "rhat1", "rhat2", "gain_lb_k1", "gain_lb_cm",
                   "ucompm_gain_ub", "overhead")


def _parse_numlist(text: str, *, allow_inf: bool = False) -> list[float]:
    out = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if allow_inf and tok.lower() in ("inf", "infinity"):
            out.append(math.inf)
        else:
            out.append(float(tok))
    if not out:
        raise InvalidParameterError("empty numeric list")
    return out


def _cmd_bounds(args) -> int:
    family = bnd.FamilySpec(k=args.k, order=args.order, d=args.d, logC=args.logC)
    lines = [",".join(_BOUNDS_COLUMNS)]
    for n in _parse_numlist(args.n):
        n = int(n)
        for m in _parse_numlist(args.m, allow_inf=True):
            query = bnd.BoundQuery(n=n, m=m, entropy_rate=args.rate, eps=args.eps,
                                   p_z=args.p_z, H_p=args.h_p)
            row = {
                "n": n, "m": m, "d": family.d, "k": args.k, "order": args.order,
                "eps": args.eps, "rate": args.rate, "p_z": args.p_z, "H_p": args.h_p,
                "Rbar": bnd.avg_minimax_redundancy(family, n),
                "rhat1": bnd.rhat1(n, m, family.d),
                "rhat2": bnd.rhat2(n, m, family.d, args.p_z, args.h_p),
                "gain_lb_k1": bnd.gain_lb_k1(query, family),
                "gain_lb_cm": bnd.gain_lb_cm(query, family),
                "ucompm_gain_ub": bnd.ucompm_gain_ub(n, family, args.rate, args.kl_rate).bound,
                "overhead": bnd.overhead_curve(family, n, args.rate, args.eps),
            }
            lines.append(",".join(
                str(row[c]) if isinstance(row[c], int) else repr(float(row[c]))
                for c in _BOUNDS_COLUMNS))
    text = "\n".join(lines) + "\n"
    if args.out:
        mio.atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


_EXPERIMENT_GRID_FIELDS = ("n", "num_memory", "memory_length")


def _expand_grid(raw: dict) -> list[ExperimentConfig]:
    grids = []
    for f in _EXPERIMENT_GRID_FIELDS:
        v = raw.get(f)
        if isinstance(v, (list, tuple)):
            grids.append([(f, int(x)) for x in v])
        elif v is not None:
            grids.append([(f, int(v))])
        else:
            grids.append([(f, None)])
    configs = []
    for a in grids[0]:
        for b in grids[1]:
            for c in grids[2]:
                point = dict(raw)
                for key, val in (a, b, c):
                    if val is None:
                        point.pop(key, None)
                    else:
                        point[key] = val
                configs.append(ExperimentConfig.from_dict(point))
    return configs


def _cmd_experiment(args) -> int:
    raw: dict = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
    if args.k is not None:
        raw["k"] = args.k
    if args.order is not None:
        raw["order"] = args.order
    if args.num_sources is not None:
        raw["num_sources"] = args.num_sources
    if args.n is not None:
        raw["n"] = [int(v) for v in _parse_numlist(args.n)]
    if args.num_memory is not None:
        raw["num_memory"] = [int(v) for v in _parse_numlist(args.num_memory)]
    if args.memory_length is not None:
        raw["memory_length"] = [int(v) for v in _parse_numlist(args.memory_length)]
    if args.depth is not None:
        raw["depth"] = args.depth
    if args.eps is not None:
        raw["eps"] = args.eps
    if args.trials is not None:
        raw["trials"] = args.trials
    if args.seed is not None:
        raw["base_seed"] = args.seed
    if args.schemes is not None:
        raw["schemes"] = [s.strip() for s in args.schemes.split(",")]
    if args.quantile_mode is not None:
        raw["quantile_mode"] = args.quantile_mode
    if args.payload_bits:
        raw["use_payload_bits"] = True
    if args.min_kl_rate is not None:
        raw["min_kl_rate"] = args.min_kl_rate
    if args.workers is not None:
        raw["workers"] = args.workers
    elif "workers" not in raw and os.environ.get("MAUC_WORKERS"):
        raw["workers"] = int(os.environ["MAUC_WORKERS"])

    configs = _expand_grid(raw)
    reports = []
    for i, cfg in enumerate(configs):
        t0 = time.monotonic()
        reports.append(run_experiment(cfg))
        print(f"grid point {i + 1}/{len(configs)}: k={cfg.k} order={cfg.order} "
              f"K={cfg.num_sources} n={cfg.n} T={cfg.num_memory} "
              f"trials={cfg.trials} ({time.monotonic() - t0:.1f}s)",
              file=sys.stderr)
    if args.out:
        emit_report(reports, args.out, args.format)
    else:
        if args.format == "csv":
            sys.stdout.write(reports_to_csv(reports))
        else:
            from .experiment import reports_to_json

            sys.stdout.write(reports_to_json(reports))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MaucError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
