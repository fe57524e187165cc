"""Command-line driver: gen, tune, run, bench, inspect.

Exit codes: 0 ok, 1 usage or configuration error, 2 corrupt input data,
3 tuning target not reachable.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgio
from .framestore import (
    CorruptChunkError,
    OversizedFrameError,
    iter_chunk_file,
    parse_chunk,
    read_frames,
    read_header,
    write_chunk_file,
)
from .pipeline import PipelineConfig, bench, bench_table, process_frames, run
from .toygen import generate_stream, read_truth, write_truth
from .tuning import tune_cuts, tune_vertex

EXIT_OK, EXIT_USAGE, EXIT_CORRUPT, EXIT_UNREACHABLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_config(path) -> PipelineConfig:
    return cfgio.load(path) if path else PipelineConfig()


def _check_geometry(path, config):
    header = read_header(path)
    if header and header.get("geometry") and header["geometry"] != config.geometry.digest():
        print(
            f"warning: {path} was generated with a different geometry", file=sys.stderr
        )


def cmd_gen(args):
    config = _load_config(args.config)
    gen = config.gen
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.rate is not None:
        changes["muon_rate"] = args.rate
    if args.signal_fraction is not None:
        changes["signal_fraction"] = args.signal_fraction
    if args.noise is not None:
        changes["noise_hits_per_frame"] = args.noise
    gen = replace(gen, **changes)
    capacity = args.capacity or config.chunk_capacity
    chunks, truths = generate_stream(gen, config.geometry, args.frames, capacity)
    write_chunk_file(args.out, chunks, capacity, config.geometry.digest())
    if args.truth:
        write_truth(args.truth, truths)
    n_dec = sum(sum(p.kind == "michel_e+" for p in t.particles) for t in truths)
    mean = n_dec / len(truths) if truths else 0.0
    print(f"wrote {args.frames} frames in {len(chunks)} chunks to {args.out}")
    print(f"mean Michel decays per frame: {mean:.3f}")
    return EXIT_OK


def _load_frames(path):
    return list(read_frames(path))


def cmd_tune(args):
    config = _load_config(args.config)
    _check_geometry(args.inp, config)
    frames = _load_frames(args.inp)
    truths = read_truth(args.truth)
    missing = [f.frame_id for f in frames if f.frame_id not in truths]
    if missing:
        raise UsageError(f"truth file lacks frame {missing[0]}")

    status = EXIT_OK
    res = tune_cuts(frames, truths, config.geometry, args.retention, config.cuts.cuts_max)
    print(
        f"cuts: target {res.target:.4f} achieved {res.achieved:.4f} "
        f"on {res.n_samples} true triplets {res.note}".rstrip()
    )
    if not res.reachable:
        status = EXIT_UNREACHABLE
    config = replace(config, cuts=res.config)
    if args.signal_in:
        if not args.signal_truth:
            raise UsageError("--signal-in needs --signal-truth")
        frames = _load_frames(args.signal_in)
        truths = read_truth(args.signal_truth)
    vres = tune_vertex(frames, truths, config, args.vertex_retention)
    if vres.n_samples == 0:
        print("vertex: no reconstructable signal frames, chi2 limit left unchanged")
    else:
        print(
            f"vertex: target {vres.target:.4f} achieved {vres.achieved:.4f} "
            f"on {vres.n_samples} signal frames {vres.note}".rstrip()
        )
        if not vres.reachable:
            status = EXIT_UNREACHABLE
        config = replace(config, vertex=vres.config)
    text = cfgio.dumps(config)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"tuned configuration written to {args.out}")
    else:
        sys.stdout.write(text)
    sys.stdout.flush()
    if status == EXIT_UNREACHABLE:
        print("requested retention not reachable; best achievable thresholds written",
              file=sys.stderr)
    return status


def cmd_run(args):
    config = _load_config(args.config)
    if args.workers:
        config = replace(config, worker_count=args.workers)
    _check_geometry(args.inp, config)
    header = read_header(args.inp)
    if header:
        config = replace(config, chunk_capacity=header["capacity"])
    truths = read_truth(args.truth) if args.truth else None
    chunks = iter_chunk_file(args.inp, config.chunk_capacity)
    out, report, decisions = run(chunks, config, truths, keep_decisions=True)
    report.config = cfgio.as_dict(config)
    write_chunk_file(args.out, out, config.chunk_capacity, config.geometry.digest())
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report.to_json_lines(decisions))
    print(report.summary_table())
    return EXIT_OK


def _parse_list(text, kind):
    try:
        return [kind(float(v)) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad list: {text!r}") from exc


def cmd_bench(args):
    config = _load_config(args.config)
    workers = _parse_list(args.workers, int)
    if any(w < 1 for w in workers):
        raise UsageError("worker counts must be positive")
    inputs = []
    if args.inp:
        header = read_header(args.inp)
        if header:
            config = replace(config, chunk_capacity=header["capacity"])
        inputs.append((args.inp, list(iter_chunk_file(args.inp, config.chunk_capacity))))
    else:
        for rate in _parse_list(args.rates, float):
            gen = replace(config.gen, muon_rate=rate)
            chunks, _ = generate_stream(gen, config.geometry, args.frames, args.capacity)
            inputs.append((f"toy {rate:.3g} mu/s", chunks))
            config = replace(config, chunk_capacity=args.capacity)
    summary = []
    for label, chunks in inputs:
        results = bench(chunks, config, workers, args.repeat)
        print(f"== {label}")
        print(bench_table(results))
        summary.append(
            {
                "input": label,
                "workers": [r.worker_count for r in results],
                "median_fps": [r.median for r in results],
                "spread_fps": [r.spread for r in results],
            }
        )
    if args.json:
        with open(args.json, "w") as fh:
            for row in summary:
                fh.write(json.dumps(row) + "\n")
    return EXIT_OK


def cmd_inspect(args):
    config = _load_config(args.config)
    header = read_header(args.inp)
    capacity = header["capacity"] if header else config.chunk_capacity
    frame = None
    for block in iter_chunk_file(args.inp, capacity):
        for f in parse_chunk(block, capacity):
            if f.frame_id == args.frame:
                frame = f
                break
        if frame is not None:
            break
    if frame is None:
        raise UsageError(f"frame {args.frame} not found in {args.inp}")
    (decision,), (info,) = process_frames([frame], config, details=True)
    print(f"frame {frame.frame_id}")
    print("hits per layer: " + " ".join(str(int(n)) for n in frame.layer_counts))
    print(f"combinations: {decision.n_combinations}  cut survivors: {decision.n_cut_survivors}")
    truth = read_truth(args.truth).get(frame.frame_id) if args.truth else None
    owners = {}
    if truth is not None:
        owners = {tuple(p.hit_indices): p.kind for p in truth.particles}
    batch = info["batch"]
    rows = np.flatnonzero(batch.accepted) if batch is not None else []
    print(f"tracks: {len(rows)}")
    for r in rows:
        t = batch.track(r, config.geometry.b_field)
        label = owners.get(t.hits, "")
        print(
            f"  hits {t.hits} q={t.charge:+d} pt={t.pt:7.2f} MeV/c "
            f"tanl={t.tan_lambda:+.3f} chi2={t.chi2:7.2f} {label}".rstrip()
        )
    vd = info["vertex"]
    if vd is not None and vd.vertex is not None:
        v = vd.vertex
        pos = ", ".join(f"{x:.3f}" for x in v.position)
        print(f"vertex: ({pos}) mm chi2={v.chi2:.3g} triple={v.triple} passed={v.passed}")
    else:
        print("vertex: none")
    print(f"decision: {decision.verdict} ({decision.reason})")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="mu3e-filter", description="Online frame filter on toy detector data")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate toy frames and truth")
    g.add_argument("--config")
    g.add_argument("--frames", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--truth")
    g.add_argument("--seed", type=int)
    g.add_argument("--rate", type=float, help="muon stop rate in 1/s")
    g.add_argument("--signal-fraction", type=float)
    g.add_argument("--noise", type=float, help="mean noise hits per frame")
    g.add_argument("--capacity", type=int, help="chunk size in bytes")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("tune", help="scan thresholds on truth-labelled data")
    t.add_argument("--config")
    t.add_argument("--in", dest="inp", required=True)
    t.add_argument("--truth", required=True)
    t.add_argument("--retention", type=float, default=0.985)
    t.add_argument("--vertex-retention", type=float, default=0.99,
                   help="signal retention of the vertex chi2 limit")
    t.add_argument("--signal-in", help="separate chunk file for the vertex scan")
    t.add_argument("--signal-truth")
    t.add_argument("--out", help="write the tuned config here")
    t.set_defaults(func=cmd_tune)

    r = sub.add_parser("run", help="filter a chunk file")
    r.add_argument("--config")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--report")
    r.add_argument("--truth")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="measure throughput")
    b.add_argument("--config")
    b.add_argument("--in", dest="inp")
    b.add_argument("--workers", default="1")
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--frames", type=int, default=20000)
    b.add_argument("--rates", default="1e8")
    b.add_argument("--capacity", type=int, default=256 * 1024)
    b.add_argument("--json")
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("inspect", help="show the filter stages for one frame")
    i.add_argument("--config")
    i.add_argument("--in", dest="inp", required=True)
    i.add_argument("--frame", type=int, required=True)
    i.add_argument("--truth")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except CorruptChunkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (cfgio.ConfigError, OversizedFrameError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
