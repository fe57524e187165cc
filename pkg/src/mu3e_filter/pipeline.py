"""Frame filter composition, chunk-level worker pool and run statistics."""
from __future__ import annotations

import json
import statistics
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cuts import FUNNEL_STAGES, CutConfig, select_triplets
from .framestore import DEFAULT_CAPACITY, CorruptChunkError, chunk_frames, parse_chunk
from .geometry import DetectorGeometry
from .toygen import GenConfig
from .tripletfit import FitConfig, fit_candidates
from .vertex import VertexConfig, evaluate_frame

KEEP_REASONS = ("triplet_overflow", "track_overflow", "comb_overflow", "vertex_found")
REASON_LABELS = {
    "triplet_overflow": "# hit triplets",
    "track_overflow": "# tracks",
    "comb_overflow": "# track combinations",
    "vertex_found": "vertex found",
}


@dataclass
class PipelineConfig:
    worker_count: int = 1
    chunk_queue_depth: int = 2
    chunk_capacity: int = DEFAULT_CAPACITY
    geometry: DetectorGeometry = field(default_factory=DetectorGeometry)
    gen: GenConfig = field(default_factory=GenConfig)
    cuts: CutConfig = field(default_factory=CutConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    vertex: VertexConfig = field(default_factory=VertexConfig)

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be at least 1")
        if self.chunk_queue_depth < 1:
            raise ValueError("chunk_queue_depth must be at least 1")


@dataclass
class FrameDecision:
    frame_id: int
    keep: bool
    reason: str = "none"
    n_combinations: int = 0
    n_cut_survivors: int = 0
    n_tracks: int = 0
    n_triples: int = 0
    funnel: tuple = (0, 0, 0, 0, 0)
    # layer-local hit indices of the accepted tracks, for truth matching
    track_hits: tuple = ()

    def __post_init__(self):
        if self.keep != (self.reason != "none"):
            raise ValueError("a frame is kept exactly when it has a keep reason")

    @property
    def verdict(self):
        return "keep" if self.keep else "discard"

    def counters(self):
        return (
            self.frame_id, self.keep, self.reason, self.n_combinations,
            self.n_cut_survivors, self.n_tracks, self.n_triples, self.funnel,
        )


def process_frames(frames, config: PipelineConfig, details=False):
    """Run the three stages over a batch of frames.

    Cuts run per frame, the track fits of the whole batch in one vectorised
    call, the vertex stage per frame. With ``details`` the per-frame stage
    outputs are returned as well, as ``(decisions, details)``.
    """
    geometry = config.geometry
    cands = [select_triplets(f, geometry, config.cuts) for f in frames]
    fit_idx = [k for k, c in enumerate(cands) if not c.overflow]
    batches = fit_candidates(
        [frames[k] for k in fit_idx], [cands[k] for k in fit_idx], geometry, config.fit
    )
    batch_of = dict(zip(fit_idx, batches))

    decisions = []
    extra = []
    for k, (frame, c) in enumerate(zip(frames, cands)):
        common = dict(
            frame_id=frame.frame_id,
            n_combinations=c.funnel[0],
            n_cut_survivors=len(c),
            funnel=tuple(int(v) for v in c.funnel),
        )
        info = {"candidates": c, "batch": batch_of.get(k), "tracks": [], "vertex": None}
        extra.append(info)
        if c.overflow:
            decisions.append(FrameDecision(keep=True, reason="triplet_overflow", **common))
            continue
        batch = batch_of[k]
        rows = np.flatnonzero(batch.accepted)
        hits = tuple(tuple(int(v) for v in batch.hits[r]) for r in rows)
        common.update(n_tracks=len(rows), track_hits=hits)
        if len(rows) > config.fit.max_tracks:
            decisions.append(FrameDecision(keep=True, reason="track_overflow", **common))
            continue
        n_pos = int((batch.kappa[rows] > 0).sum())
        if n_pos < 2 or n_pos == len(rows):
            decisions.append(FrameDecision(keep=False, **common))
            continue
        tracks = [batch.track(r, geometry.b_field) for r in rows]
        vd = evaluate_frame(tracks, config.vertex, geometry)
        info["tracks"] = tracks
        info["vertex"] = vd
        decisions.append(
            FrameDecision(keep=vd.keep, reason=vd.reason, n_triples=vd.n_triples, **common)
        )
    if details:
        return decisions, extra
    return decisions


def process_frame(frame, config: PipelineConfig) -> FrameDecision:
    return process_frames([frame], config)[0]


# -- chunk workers -------------------------------------------------------------

_WORKER_CONFIG = None


def _init_worker(config):
    global _WORKER_CONFIG
    _WORKER_CONFIG = config


def _process_chunk(block, config=None):
    config = config or _WORKER_CONFIG
    frames = parse_chunk(block, config.chunk_capacity)
    decisions = process_frames(frames, config) if frames else []
    kept = [f for f, d in zip(frames, decisions) if d.keep]
    return decisions, kept


def _chunk_results(chunks, config):
    """Yield per-chunk results in input order, using a bounded window of work."""
    if config.worker_count == 1:
        for i, block in enumerate(chunks):
            yield i, _guard(i, _process_chunk, block, config)
        return
    window = config.worker_count * config.chunk_queue_depth
    with ProcessPoolExecutor(
        config.worker_count, initializer=_init_worker, initargs=(config,)
    ) as pool:
        pending = deque()
        for i, block in enumerate(chunks):
            pending.append((i, pool.submit(_process_chunk, block)))
            if len(pending) >= window:
                j, fut = pending.popleft()
                yield j, _guard(j, fut.result)
        while pending:
            j, fut = pending.popleft()
            yield j, _guard(j, fut.result)


def _guard(index, fn, *args):
    try:
        return fn(*args)
    except CorruptChunkError as exc:
        exc.chunk_index = index
        exc.args = (f"chunk {index}: {exc.args[0]}",)
        raise


# -- reporting -----------------------------------------------------------------


@dataclass
class RunReport:
    frames_total: int = 0
    frames_kept: int = 0
    kept_by_reason: dict = field(default_factory=lambda: {r: 0 for r in KEEP_REASONS})
    frames_discarded: int = 0
    funnel: list = field(default_factory=lambda: [0] * len(FUNNEL_STAGES))
    tracks_total: int = 0
    signal_frames: int = 0
    signal_frames_kept: int = 0
    truth_tracks: int = 0
    truth_tracks_found: int = 0
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    def add(self, d: FrameDecision):
        self.frames_total += 1
        if d.keep:
            self.frames_kept += 1
            self.kept_by_reason[d.reason] += 1
        else:
            self.frames_discarded += 1
        for i, v in enumerate(d.funnel):
            self.funnel[i] += v
        self.tracks_total += d.n_tracks

    def add_truth(self, d: FrameDecision, truth):
        found = set(d.track_hits)
        for p in truth.particles:
            if p.n_layers_hit == 4:
                self.truth_tracks += 1
                self.truth_tracks_found += tuple(p.hit_indices) in found
        if truth.signal_in_acceptance:
            self.signal_frames += 1
            self.signal_frames_kept += d.keep

    @property
    def throughput(self):
        return self.frames_total / self.wall_time if self.wall_time > 0 else 0.0

    @property
    def kept_fraction(self):
        return self.frames_kept / self.frames_total if self.frames_total else 0.0

    @property
    def reduction_factor(self):
        return self.frames_total / self.frames_kept if self.frames_kept else float("inf")

    @property
    def signal_frame_efficiency(self):
        return self.signal_frames_kept / self.signal_frames if self.signal_frames else float("nan")

    @property
    def track_efficiency(self):
        return self.truth_tracks_found / self.truth_tracks if self.truth_tracks else float("nan")

    def counters(self):
        """Raw counts only; timing and derived ratios are left out."""
        d = asdict(self)
        d.pop("wall_time")
        return d

    def to_dict(self):
        d = asdict(self)
        d.update(
            throughput=self.throughput,
            kept_fraction=self.kept_fraction,
            signal_frame_efficiency=self.signal_frame_efficiency,
            track_efficiency=self.track_efficiency,
        )
        return d

    def to_json_lines(self, decisions=()):
        lines = [json.dumps({"record": "summary", **self.to_dict()})]
        for d in decisions:
            if d.keep:
                lines.append(
                    json.dumps(
                        {
                            "record": "kept",
                            "frame_id": d.frame_id,
                            "reason": d.reason,
                            "n_cut_survivors": d.n_cut_survivors,
                            "n_tracks": d.n_tracks,
                            "n_triples": d.n_triples,
                        }
                    )
                )
        return "\n".join(lines) + "\n"

    def summary_table(self):
        total = self.frames_total
        pct = (lambda n: 100.0 * n / total) if total else (lambda n: 0.0)
        rows = [f"{'reason to keep':<24}{'frames':>10}{'% of all':>12}"]
        for r in KEEP_REASONS:
            n = self.kept_by_reason[r]
            rows.append(f"{REASON_LABELS[r]:<24}{n:>10}{pct(n):>11.3f}%")
        rows.append(f"{'total kept':<24}{self.frames_kept:>10}{pct(self.frames_kept):>11.3f}%")
        rows.append(f"{'frames processed':<24}{total:>10}")
        rows.append(f"reduction factor        {self.reduction_factor:>10.1f}")
        if self.signal_frames:
            rows.append(f"signal-frame efficiency {100 * self.signal_frame_efficiency:>9.2f}%")
        if self.truth_tracks:
            rows.append(f"track efficiency        {100 * self.track_efficiency:>9.2f}%")
        rows.append(f"throughput              {self.throughput:>10.0f} frames/s")
        return "\n".join(rows)


def run(chunks, config: PipelineConfig, truths=None, keep_decisions=False):
    """Filter a chunk stream.

    Returns ``(kept_chunks, report)`` or, with ``keep_decisions``,
    ``(kept_chunks, report, decisions)``. Output is independent of
    ``worker_count``. ``truths`` maps frame id to :class:`TruthFrame`.
    """
    report = RunReport()
    kept = []
    all_decisions = []
    t0 = time.perf_counter()
    for _, (decisions, frames) in _chunk_results(chunks, config):
        for d in decisions:
            report.add(d)
            if truths is not None and d.frame_id in truths:
                report.add_truth(d, truths[d.frame_id])
        kept.extend(frames)
        if keep_decisions:
            all_decisions.extend(decisions)
    report.wall_time = time.perf_counter() - t0
    out = list(chunk_frames(kept, config.chunk_capacity))
    if keep_decisions:
        return out, report, all_decisions
    return out, report


@dataclass
class BenchResult:
    worker_count: int
    n_frames: int
    rates: list  # frames/s, one per repeat

    @property
    def median(self):
        return statistics.median(self.rates) if self.rates else 0.0

    @property
    def spread(self):
        return (max(self.rates) - min(self.rates)) if self.rates else 0.0


def bench(chunks, config: PipelineConfig, worker_counts=(1,), repeat=3) -> list:
    """Throughput of :func:`run` for each worker count; input is pre-generated."""
    if repeat < 1:
        raise ValueError("repeat must be at least 1")
    chunks = list(chunks)
    n_frames = sum(len(parse_chunk(b)) for b in chunks)
    results = []
    for w in worker_counts:
        cfg = replace(config, worker_count=w)
        rates = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            run(chunks, cfg)
            dt = time.perf_counter() - t0
            rates.append(n_frames / dt if dt > 0 and n_frames else 0.0)
        results.append(BenchResult(w, n_frames, rates))
    return results


def bench_table(results):
    rows = [f"{'workers':>8}{'frames':>10}{'median frames/s':>18}{'spread':>12}"]
    for r in results:
        rows.append(f"{r.worker_count:>8}{r.n_frames:>10}{r.median:>18.0f}{r.spread:>12.0f}")
    return "\n".join(rows)


def frames_of(chunks, capacity=None):
    for block in chunks:
        yield from parse_chunk(block, capacity)

