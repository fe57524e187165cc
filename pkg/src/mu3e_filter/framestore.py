"""Fixed-size binary chunks holding a variable number of frames.

Layout of one chunk of ``capacity`` bytes (little-endian throughout)::

    [0, 12*H)                       hit records, 3 x float32 (x, y, z)
    ...                             zero-filled slack
    [cap-4-28*(k+1), cap-4-28*k)    descriptor of frame k:
                                    u64 frame_id, u32 layer_start[4], u32 end
    [cap-4, cap)                    u32 frame count

Hits are sorted by frame, then layer. Descriptor indices are absolute hit
indices inside the chunk, so per-layer counts come from index differences.
A chunk file is the plain concatenation of chunk blocks; the capacity and
the geometry digest are stored in a small JSON header next to it.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

HIT_DTYPE = np.dtype("<f4")
HIT_SIZE = 12
DESC_STRUCT = struct.Struct("<Q5I")
DESC_SIZE = DESC_STRUCT.size  # 28
FOOTER_SIZE = 4
N_LAYERS = 4
DEFAULT_CAPACITY = 4 * 1024 * 1024
MIN_CAPACITY = HIT_SIZE + DESC_SIZE + FOOTER_SIZE
HEADER_SUFFIX = ".hdr"
FORMAT_VERSION = 1


class OversizedFrameError(ValueError):
    """A single frame does not fit into an empty chunk."""


class CorruptChunkError(ValueError):
    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        msg = f"corrupt chunk: {invariant}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass
class Frame:
    """One timeslice: hits sorted by layer plus the layer boundaries.

    ``offsets`` has five entries; layer ``i`` occupies
    ``hits[offsets[i]:offsets[i + 1]]``. ``hits`` keeps the on-disk float32
    values so that re-serialisation is bit exact.
    """

    frame_id: int
    hits: np.ndarray
    offsets: np.ndarray

    def layer(self, i) -> np.ndarray:
        return self.hits[self.offsets[i] : self.offsets[i + 1]]

    @property
    def layer_counts(self):
        return np.diff(self.offsets)

    @property
    def n_hits(self) -> int:
        return int(self.offsets[-1])

    def hits_by_layer(self):
        return [self.layer(i) for i in range(N_LAYERS)]

    @classmethod
    def from_layers(cls, frame_id, hits_by_layer, dtype=HIT_DTYPE):
        arrays = [np.asarray(h, dtype=dtype).reshape(-1, 3) for h in hits_by_layer]
        if len(arrays) != N_LAYERS:
            raise ValueError("need hits for exactly four layers")
        offsets = np.concatenate([[0], np.cumsum([len(a) for a in arrays])])
        return cls(int(frame_id), np.concatenate(arrays), offsets.astype(np.int64))

    def same_as(self, other) -> bool:
        return (
            self.frame_id == other.frame_id
            and np.array_equal(self.offsets, other.offsets)
            and self.hits.tobytes() == other.hits.tobytes()
        )


class ChunkBuilder:
    """Single-writer builder for one chunk."""

    def __init__(self, capacity=DEFAULT_CAPACITY):
        if capacity < MIN_CAPACITY:
            raise ValueError(
                f"chunk capacity {capacity} below minimum of {MIN_CAPACITY} bytes"
            )
        self.capacity = int(capacity)
        self._hits = []
        self._descriptors = []
        self._n_hits = 0
        self._last_id = None
        self.sealed = False

    @property
    def frame_count(self):
        return len(self._descriptors)

    @property
    def used_bytes(self):
        return HIT_SIZE * self._n_hits + DESC_SIZE * len(self._descriptors) + FOOTER_SIZE

    def fits(self, n_hits):
        return self.used_bytes + HIT_SIZE * n_hits + DESC_SIZE <= self.capacity

    def push_frame(self, frame_id, hits_by_layer) -> bool:
        """Append a frame. Returns False (builder unchanged) if the chunk is full."""
        if self.sealed:
            raise RuntimeError("builder already sealed")
        arrays = [np.asarray(h, dtype=HIT_DTYPE).reshape(-1, 3) for h in hits_by_layer]
        if len(arrays) != N_LAYERS:
            raise ValueError("need hits for exactly four layers")
        n = sum(len(a) for a in arrays)
        if HIT_SIZE * n + DESC_SIZE + FOOTER_SIZE > self.capacity:
            raise OversizedFrameError(
                f"frame {frame_id} with {n} hits needs more than {self.capacity} bytes"
            )
        if self._last_id is not None and frame_id <= self._last_id:
            raise ValueError("frame ids must increase within a chunk")
        if not self.fits(n):
            return False
        starts = []
        pos = self._n_hits
        for a in arrays:
            starts.append(pos)
            pos += len(a)
        self._descriptors.append((int(frame_id), *starts, pos))
        self._hits.extend(a for a in arrays if len(a))
        self._n_hits = pos
        self._last_id = int(frame_id)
        return True

    def push(self, frame: Frame) -> bool:
        return self.push_frame(frame.frame_id, frame.hits_by_layer())

    def seal(self) -> bytes:
        buf = bytearray(self.capacity)
        if self._hits:
            hit_bytes = np.concatenate(self._hits).astype(HIT_DTYPE, copy=False).tobytes()
            buf[: len(hit_bytes)] = hit_bytes
        end = self.capacity - FOOTER_SIZE
        for k, desc in enumerate(self._descriptors):
            DESC_STRUCT.pack_into(buf, end - DESC_SIZE * (k + 1), *desc)
        struct.pack_into("<I", buf, end, len(self._descriptors))
        self.sealed = True
        return bytes(buf)


DESC_DTYPE = np.dtype([("frame_id", "<u8"), ("idx", "<u4", (5,))])


def parse_chunk(block, capacity=None):
    """Decode a chunk into a list of :class:`Frame`, validating every invariant."""
    if capacity is not None and len(block) != capacity:
        raise CorruptChunkError(
            "block size equals capacity", f"{len(block)} != {capacity}"
        )
    cap = len(block)
    if cap < MIN_CAPACITY:
        raise CorruptChunkError("block holds footer", f"{cap} bytes")
    (count,) = struct.unpack_from("<I", block, cap - FOOTER_SIZE)
    desc_start = cap - FOOTER_SIZE - DESC_SIZE * count
    if desc_start < 0:
        raise CorruptChunkError("descriptor area inside block", f"frame_count={count}")

    # stored backwards: descriptor k sits just below descriptor k-1
    descs = np.frombuffer(block, dtype=DESC_DTYPE, count=count, offset=desc_start)[::-1]
    ids = descs["frame_id"]
    idx = descs["idx"].astype(np.int64)
    if count:
        starts = idx[:, 0]
        expected = np.concatenate([[0], idx[:-1, 4]])
        bad = np.flatnonzero(starts != expected)
        if bad.size:
            k = int(bad[0])
            raise CorruptChunkError(
                "frames contiguous in hit area",
                f"frame {k} starts at {starts[k]}, expected {expected[k]}",
            )
        bad = np.flatnonzero(np.any(np.diff(idx, axis=1) < 0, axis=1))
        if bad.size:
            raise CorruptChunkError("layer starts ordered", f"frame {int(bad[0])}")
        bad = np.flatnonzero(ids[1:] <= ids[:-1])
        if bad.size:
            raise CorruptChunkError("frame ids increasing", f"frame {int(bad[0]) + 1}")
    n_hits = int(idx[-1, 4]) if count else 0
    if HIT_SIZE * n_hits > desc_start:
        raise CorruptChunkError(
            "hit area and descriptor area disjoint", f"{n_hits} hits, {count} frames"
        )
    slack = np.frombuffer(
        block, dtype=np.uint8, count=desc_start - HIT_SIZE * n_hits, offset=HIT_SIZE * n_hits
    )
    if slack.any():
        raise CorruptChunkError("slack region zero-filled")
    hits = np.frombuffer(block, dtype=HIT_DTYPE, count=3 * n_hits).reshape(n_hits, 3)
    if not np.all(np.isfinite(hits)):
        raise CorruptChunkError("hit coordinates finite")

    rel = idx - idx[:, :1]
    return [
        Frame(int(ids[k]), hits[idx[k, 0] : idx[k, 4]], rel[k])
        for k in range(count)
    ]


def chunk_frames(frames, capacity=DEFAULT_CAPACITY):
    """Pack frames into sealed chunks, starting a new chunk on overflow."""
    builder = ChunkBuilder(capacity)
    emitted = 0
    for frame in frames:
        if not builder.push(frame):
            yield builder.seal()
            emitted += 1
            builder = ChunkBuilder(capacity)
            builder.push(frame)
    if builder.frame_count or not emitted:
        yield builder.seal()


def write_chunk_file(path, chunks, capacity, geometry_digest=""):
    n = 0
    with open(path, "wb") as fh:
        for block in chunks:
            if len(block) != capacity:
                raise ValueError("chunk size does not match capacity")
            fh.write(block)
            n += 1
    header = {
        "format": "m3c",
        "version": FORMAT_VERSION,
        "capacity": int(capacity),
        "geometry": geometry_digest,
        "chunks": n,
    }
    with open(str(path) + HEADER_SUFFIX, "w") as fh:
        json.dump(header, fh)
    return header


def read_header(path):
    hdr_path = str(path) + HEADER_SUFFIX
    if not os.path.exists(hdr_path):
        return None
    with open(hdr_path) as fh:
        return json.load(fh)


def iter_chunk_file(path, capacity=None):
    """Yield raw chunk blocks from a chunk file."""
    if capacity is None:
        header = read_header(path)
        if header is None:
            raise ValueError(f"no header for {path}; pass the chunk capacity explicitly")
        capacity = header["capacity"]
    size = os.path.getsize(path)
    if size % capacity:
        raise CorruptChunkError(
            "file length multiple of capacity", f"{size} bytes, capacity {capacity}"
        )
    with open(path, "rb") as fh:
        while True:
            block = fh.read(capacity)
            if not block:
                break
            yield block


def read_frames(path, capacity=None):
    for block in iter_chunk_file(path, capacity):
        yield from parse_chunk(block)
