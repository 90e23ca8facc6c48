"""Command-line harness: verify, bench, locality, needle, flops.

Every command emits machine-readable output (JSON, JSON lines, or
RFC-4180 CSV) and uses exit codes 0 (pass), 1 (a check failed), and
2 (usage or configuration error). All randomness is seeded through one
flag, and verification runs pin the math-library thread pool to one
worker so reports reproduce byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

from .attn_core import ConfigError, HeadGeometry
from .criticality import locality_matrix, locality_summary
from .flops import count_flops
from .pipeline import (
    ModelLoadError,
    gen_synthetic_inputs,
    gen_synthetic_model,
    load_model,
    prefill,
)
from .pruned_attn import PrunedAttnConfig
from .rng import SUBSTREAM_SYNTH, RngSpec
from .synth import (
    DEFAULT_DRIFT_SCALE,
    drifting_queries,
    iid_matrix,
    needle_verdict,
)
from .verify import KNOWN_FAULTS, run_verification

SCHEMA_VERSION = 1


def _parse_int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _parse_float_list(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a float list: {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seq-len", type=_parse_int_list, default=[4096],
                   help="sequence length; comma-separated values sweep where supported")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--head-dim", type=int, default=16)
    p.add_argument("--segment-size", type=int, default=512)
    p.add_argument("--block-size", type=int, default=32)
    p.add_argument("--budget", type=int, default=1024)
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--scale-logits", action="store_true",
                   help="scale estimator logits by 1/sqrt(head_dim)")
    p.add_argument("--mode", choices=("dense", "pruned", "both"), default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", default=None, help="model directory to load")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--workers", type=int, default=0,
                   help="math-library thread cap; 0 leaves it alone")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparseprefill",
        description="block-sparse prefill engine: verification and benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run the full invariant suite")
    _shared_flags(p_verify)
    p_verify.add_argument("--inject-fault", choices=KNOWN_FAULTS, default=None,
                          help="break the kernel on purpose; the suite must notice")

    p_bench = sub.add_parser("bench", help="time dense vs pruned prefill over n")
    _shared_flags(p_bench)
    p_bench.add_argument("--check-deviation", action="store_true",
                         help="also report max-abs deviation of pruned vs dense output")
    p_bench.add_argument("--max-elements", type=int, default=1 << 27,
                         help="refuse runs whose hidden state exceeds this element count")

    p_loc = sub.add_parser("locality", help="critical-set overlap grid over query pairs")
    _shared_flags(p_loc)
    p_loc.add_argument("--top-k", type=int, default=512)
    p_loc.add_argument("--stride", type=int, default=None,
                       help="query subsampling stride (default: seq_len / 32)")
    p_loc.add_argument("--source", choices=("drifting", "iid", "model"),
                       default="drifting")
    p_loc.add_argument("--drift-scale", type=float, default=DEFAULT_DRIFT_SCALE)
    p_loc.add_argument("--head", type=int, default=0)

    p_needle = sub.add_parser("needle", help="planted-block retrieval sweep")
    _shared_flags(p_needle)
    p_needle.add_argument("--depths", type=_parse_float_list, default=[0.1, 0.5, 0.9],
                          help="planted depths as fractions of the block axis")
    p_needle.add_argument("--plant-magnitude", type=float, default=10.0)

    p_flops = sub.add_parser("flops", help="closed-form FLOP accounting, no tensor work")
    _shared_flags(p_flops)
    return parser


def _thread_limit(workers: int):
    if workers and workers > 0:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=workers)
    return nullcontext()


def _geometry(args) -> HeadGeometry:
    return HeadGeometry(n_heads=args.heads, head_dim=args.head_dim)


def _config(args) -> PrunedAttnConfig:
    return PrunedAttnConfig(
        segment_size=args.segment_size,
        block_size=args.block_size,
        budget=args.budget,
        alpha=args.alpha,
        scale_logits=args.scale_logits,
    )


def _config_dict(cfg: PrunedAttnConfig) -> dict:
    return {
        "segment_size": cfg.segment_size,
        "block_size": cfg.block_size,
        "budget": cfg.budget,
        "alpha": cfg.alpha,
        "scale_logits": cfg.scale_logits,
    }


def _geometry_dict(geom: HeadGeometry) -> dict:
    return {
        "n_heads": geom.n_heads,
        "head_dim": geom.head_dim,
        "model_dim": geom.model_dim,
    }


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _single_seq_len(args) -> int:
    if len(args.seq_len) != 1:
        raise ConfigError("this command takes a single --seq-len value")
    return args.seq_len[0]


def _get_model(args, rng: RngSpec):
    """Load the flagged model, else generate one; its geometry wins."""
    if args.model is not None:
        return load_model(args.model)
    return gen_synthetic_model(_geometry(args), args.layers, rng)


def cmd_verify(args) -> int:
    with _thread_limit(1):  # byte-identical reports need one math thread
        report = run_verification(seed=args.seed, fault=args.inject_fault)
    _emit(json.dumps(report, indent=2, sort_keys=True), args.out)
    return 0 if report["all_pass"] else 1


@dataclass
class BenchResult:
    mode: str
    n: int
    geometry: dict
    config: dict
    seed: int
    repeats: int
    wall_clock_s: float
    per_layer_s: list[float]
    flops: dict
    deviation: float | None

    def to_dict(self) -> dict:
        record = {
            "schema_version": SCHEMA_VERSION,
            "kind": "bench",
            "mode": self.mode,
            "n": self.n,
            "geometry": self.geometry,
            "config": self.config,
            "seed": self.seed,
            "repeats": self.repeats,
            "wall_clock_s": self.wall_clock_s,
            "per_layer_s": self.per_layer_s,
            "flops": self.flops,
        }
        if self.deviation is not None:
            record["max_abs_deviation_vs_dense"] = self.deviation
        return record

    def to_row(self) -> dict:
        row = {
            "mode": self.mode,
            "n": self.n,
            **self.geometry,
            **self.config,
            "seed": self.seed,
            "repeats": self.repeats,
            "wall_clock_s": self.wall_clock_s,
            "dense_flops": self.flops["dense"],
            "pruned_flops": self.flops["pruned"],
            "overhead_flops": self.flops["overhead"],
            "flop_ratio": self.flops["ratio"],
            "max_abs_deviation_vs_dense": (
                "" if self.deviation is None else self.deviation
            ),
        }
        return row


def cmd_bench(args) -> int:
    cfg = _config(args)
    rng = RngSpec(args.seed)
    model = _get_model(args, rng)
    geom = model.geometry
    modes = ["dense", "pruned"] if args.mode == "both" else [args.mode]
    if args.check_deviation and "dense" not in modes:
        modes = ["dense"] + modes

    for n in args.seq_len:
        if n * geom.model_dim > args.max_elements:
            raise ConfigError(
                f"n={n} with model_dim={geom.model_dim} exceeds "
                f"--max-elements={args.max_elements}"
            )

    results: list[BenchResult] = []
    with _thread_limit(args.workers):
        for n in args.seq_len:
            x0 = gen_synthetic_inputs(n, geom, rng)
            dense_hidden = None
            for mode in modes:
                prefill(model, x0, cfg, mode=mode)  # warm-up, excluded
                runs = []
                for _ in range(max(1, args.repeats)):
                    t0 = time.perf_counter()
                    res = prefill(model, x0, cfg, mode=mode)
                    runs.append((time.perf_counter() - t0, res))
                wall = statistics.median(r[0] for r in runs)
                per_layer = [
                    statistics.median(r[1].per_layer_seconds[i] for r in runs)
                    for i in range(model.n_layers)
                ]
                last = runs[-1][1]
                if mode == "dense":
                    dense_hidden = last.hidden
                deviation = None
                if args.check_deviation and mode == "pruned":
                    deviation = float(
                        np.abs(
                            last.hidden.astype(np.float64)
                            - dense_hidden.astype(np.float64)
                        ).max()
                    )
                results.append(
                    BenchResult(
                        mode=mode,
                        n=n,
                        geometry=_geometry_dict(geom),
                        config=_config_dict(cfg),
                        seed=args.seed,
                        repeats=args.repeats,
                        wall_clock_s=wall,
                        per_layer_s=per_layer,
                        flops=last.flops.to_dict(),
                        deviation=deviation,
                    )
                )

    if args.format == "json":
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in results]
        _emit("\n".join(lines) + "\n", args.out)
    else:
        _emit(_rows_to_csv([r.to_row() for r in results]), args.out)
    return 0


def _rows_to_csv(rows: list[dict]) -> str:
    import io

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def cmd_locality(args) -> int:
    n = _single_seq_len(args)
    k = args.top_k
    d = args.head_dim
    rng = RngSpec(args.seed)
    stride = args.stride if args.stride is not None else max(1, n // 32)

    with _thread_limit(args.workers):
        if args.source == "drifting":
            stream = rng.stream(SUBSTREAM_SYNTH)
            q = drifting_queries(n, d, stream, drift_scale=args.drift_scale)
            keys = iid_matrix(n, d, stream)
        elif args.source == "iid":
            stream = rng.stream(SUBSTREAM_SYNTH)
            q = iid_matrix(n, d, stream)
            keys = iid_matrix(n, d, stream)
        else:
            model = _get_model(args, rng)
            geom = model.geometry
            if not 0 <= args.head < geom.n_heads:
                raise ConfigError(f"--head {args.head} out of range")
            x0 = gen_synthetic_inputs(n, geom, rng)
            from .attn_core import project, split_heads

            qf, kf, _ = project(
                x0, model.layers[0].w_q, model.layers[0].w_k, model.layers[0].w_v
            )
            q = split_heads(qf, geom)[args.head]
            keys = split_heads(kf, geom)[args.head]

        positions, grid = locality_matrix(q, keys, k, stride)
        summary = locality_summary(positions, grid, n)

    out = args.out if args.out is not None else "locality.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_i", "query_j", "overlap"])
        for a, pa in enumerate(positions):
            for b, pb in enumerate(positions):
                writer.writerow([int(pa), int(pb), repr(float(grid[a, b]))])

    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "locality",
        "n": n,
        "k": k,
        "stride": stride,
        "source": args.source,
        "seed": args.seed,
        "csv": out,
        **summary,
    }
    sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_needle(args) -> int:
    cfg = _config(args)
    rng = RngSpec(args.seed)
    cells = []
    with _thread_limit(args.workers):
        for n in args.seq_len:
            for depth in args.depths:
                case = needle_verdict(
                    n, args.head_dim, cfg, depth, args.plant_magnitude, rng
                )
                cells.append(
                    {
                        "n": case.n_tokens,
                        "depth": case.depth_frac,
                        "planted_block": case.planted_block,
                        "found": case.found,
                        "forced_diagonal": case.forced_diagonal,
                        "score_margin": case.score_margin,
                    }
                )
    all_found = all(c["found"] for c in cells)
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "needle",
        "config": _config_dict(cfg),
        "head_dim": args.head_dim,
        "plant_magnitude": args.plant_magnitude,
        "seed": args.seed,
        "grid": cells,
        "all_found": all_found,
    }
    _emit(json.dumps(report, indent=2, sort_keys=True), args.out)
    return 0 if (all_found or args.plant_magnitude == 0.0) else 1


def cmd_flops(args) -> int:
    geom = _geometry(args)
    cfg = _config(args)
    mode = "pruned" if args.mode == "both" else args.mode
    reports = [
        count_flops(n, args.layers, geom, cfg, mode=mode) for n in args.seq_len
    ]
    if args.format == "json":
        body = {
            "schema_version": SCHEMA_VERSION,
            "command": "flops",
            "geometry": _geometry_dict(geom),
            "config": _config_dict(cfg),
            "layers": args.layers,
            "reports": [r.to_dict() for r in reports],
        }
        _emit(json.dumps(body, indent=2, sort_keys=True), args.out)
    else:
        rows = [
            {
                "n": r.n_tokens,
                "mode": r.mode,
                "dense": r.dense,
                "pruned": r.pruned,
                "overhead": r.overhead,
                "ratio": r.ratio,
            }
            for r in reports
        ]
        _emit(_rows_to_csv(rows), args.out)
    return 0


_COMMANDS = {
    "verify": cmd_verify,
    "bench": cmd_bench,
    "locality": cmd_locality,
    "needle": cmd_needle,
    "flops": cmd_flops,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ModelLoadError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
