"""Hierarchical proximity graph construction, the Δd statistic, and index files."""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .core import AttributeTable, DataError, UsageError, VectorDataset

MAGIC = b"FVRX"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQIIIQdIIQ")


class BuildError(RuntimeError):
    pass


class IndexFormatError(DataError):
    pass


class ChecksumError(IndexFormatError):
    pass


@dataclass(frozen=True)
class BuildParams:
    M: int = 32
    efc: int = 40
    level_norm: float | None = None
    alpha_rank: int = 10
    beta_rank: int | None = None
    seed: int = 42

    def __post_init__(self):
        if self.M < 2:
            raise UsageError("M must be >= 2")
        if self.efc < 1:
            raise UsageError("efc must be >= 1")
        if self.level_norm is None:
            object.__setattr__(self, "level_norm", 1.0 / math.log(self.M))
        if self.beta_rank is None:
            object.__setattr__(self, "beta_rank", self.efc)
        if self.level_norm <= 0:
            raise UsageError("level_norm must be positive")
        if not (1 <= self.alpha_rank < self.beta_rank <= self.efc):
            raise UsageError(
                f"need 1 <= alpha_rank < beta_rank <= efc, got "
                f"alpha={self.alpha_rank} beta={self.beta_rank} efc={self.efc}"
            )
        if self.seed < 0:
            raise UsageError("seed must be non-negative")

    @property
    def M0(self) -> int:
        return 2 * self.M


@dataclass(eq=False)
class HnswIndex:
    """Immutable multi-layer graph over a dataset.

    ``vectors`` and ``attributes`` are attached in memory but never written
    to the index file.
    """

    params: BuildParams
    dim: int
    entry_point: int
    top_layer: int
    node_levels: np.ndarray
    links0: np.ndarray
    deg0: np.ndarray
    up_links: np.ndarray
    up_deg: np.ndarray
    up_off: np.ndarray
    delta_d: float
    vectors: np.ndarray | None = field(default=None, repr=False)
    attributes: AttributeTable | None = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return len(self.node_levels)

    def neighbors(self, node: int, layer: int) -> np.ndarray:
        if not 0 <= node < self.count:
            raise UsageError(f"node {node} out of range")
        if layer == 0:
            return self.links0[node, : self.deg0[node]]
        if not 0 < layer <= self.node_levels[node]:
            raise UsageError(f"node {node} is not present on layer {layer}")
        r = self.up_off[node] + layer - 1
        return self.up_links[r, : self.up_deg[r]]

    def layer_members(self, layer: int) -> np.ndarray:
        return np.flatnonzero(self.node_levels >= layer)

    @property
    def layers(self) -> list[dict[int, list[int]]]:
        """Adjacency per layer as ``{node: [neighbors]}`` (a copy)."""
        return [
            {int(v): self.neighbors(int(v), layer).tolist() for v in self.layer_members(layer)}
            for layer in range(self.top_layer + 1)
        ]

    def attach(self, ds: VectorDataset) -> "HnswIndex":
        if ds.count != self.count or ds.dim != self.dim:
            raise DataError(
                f"dataset ({ds.count}x{ds.dim}) does not match index ({self.count}x{self.dim})"
            )
        self.vectors = ds.vectors
        self.attributes = ds.attributes
        return self

    def require_data(self) -> None:
        if self.vectors is None or self.attributes is None:
            raise UsageError("index has no dataset attached; call attach(ds)")

    def structurally_equal(self, other: "HnswIndex") -> bool:
        return (
            self.params == other.params
            and self.dim == other.dim
            and self.entry_point == other.entry_point
            and self.top_layer == other.top_layer
            and self.delta_d == other.delta_d
            and np.array_equal(self.node_levels, other.node_levels)
            and self.layers == other.layers
        )

    @classmethod
    def from_adjacency(cls, ds: VectorDataset, layers: list[dict[int, list[int]]],
                       entry_point: int, delta_d: float,
                       params: BuildParams | None = None) -> "HnswIndex":
        """Assemble an index from explicit adjacency (used for hand-built graphs)."""
        if params is None:
            params = BuildParams(M=max(2, max((len(v) for lay in layers for v in lay.values()), default=2)),
                                 efc=40)
        n = ds.count
        levels = np.zeros(n, np.int32)
        for layer, adj in enumerate(layers):
            for v in adj:
                levels[v] = max(levels[v], layer)
        if len(layers) and set(layers[0]) != set(range(n)):
            missing = set(range(n)) - set(layers[0])
            for v in missing:
                layers[0][v] = []
        up_off, slots = _upper_offsets(levels)
        M, M0 = params.M, params.M0
        width0 = max(M0, max((len(v) for v in layers[0].values()), default=0))
        width = max(M, max((len(v) for lay in layers[1:] for v in lay.values()), default=0))
        links0 = np.full((n, width0), -1, np.int64)
        deg0 = np.zeros(n, np.int32)
        up_links = np.full((slots, width), -1, np.int64)
        up_deg = np.zeros(slots, np.int32)
        for layer, adj in enumerate(layers):
            for v, nbrs in adj.items():
                if layer == 0:
                    links0[v, : len(nbrs)] = nbrs
                    deg0[v] = len(nbrs)
                else:
                    r = up_off[v] + layer - 1
                    up_links[r, : len(nbrs)] = nbrs
                    up_deg[r] = len(nbrs)
        top = int(levels.max()) if n else 0
        return cls(params, ds.dim, int(entry_point), top, levels, links0, deg0, up_links,
                   up_deg, up_off, float(delta_d), ds.vectors, ds.attributes)


def _upper_offsets(levels: np.ndarray) -> tuple[np.ndarray, int]:
    up_off = np.full(len(levels), -1, np.int64)
    has_upper = levels > 0
    counts = levels[has_upper].astype(np.int64)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1])) if len(counts) else counts
    up_off[has_upper] = starts
    return up_off, int(counts.sum())


def sample_levels(count: int, level_norm: float, seed: int) -> np.ndarray:
    """floor(-ln(U) * level_norm) with U uniform on (0, 1]."""
    u = 1.0 - np.random.default_rng(seed).random(count)
    return np.floor(-np.log(u) * level_norm).astype(np.int32)


def record_delta_d(candidate_lists, alpha_rank: int, beta_rank: int) -> float:
    """Mean of ``(d_beta - d_alpha) / (beta - alpha)`` over qualifying candidate lists.

    Each list holds the distances from one inserted point to its construction
    candidates; lists shorter than ``beta_rank`` are skipped.  Ranks are 1-based.
    """
    if not 1 <= alpha_rank < beta_rank:
        raise UsageError("need 1 <= alpha_rank < beta_rank")
    total = 0.0
    used = 0
    for dists in candidate_lists:
        d = np.sort(np.asarray(dists, dtype=np.float64))
        if len(d) < beta_rank:
            continue
        total += (d[beta_rank - 1] - d[alpha_rank - 1]) / (beta_rank - alpha_rank)
        used += 1
    if used == 0:
        raise BuildError(
            f"no insertion produced {beta_rank} construction candidates; "
            "use a larger dataset or a smaller beta_rank"
        )
    return _check_delta(total / used)


def _check_delta(delta_d: float) -> float:
    if not delta_d > 0:
        raise BuildError(
            f"degenerate density statistic (delta_d={delta_d}); the data has too few "
            "distinct points for an exclusion distance"
        )
    return delta_d


def build(ds: VectorDataset, params: BuildParams | None = None) -> HnswIndex:
    """Build the graph by inserting vectors in id order.

    Δd is accumulated from the base-layer construction candidate lists.  A
    dataset with at most ``beta_rank`` points cannot produce a qualifying
    list; such indexes carry ``delta_d = 0`` and only support unfiltered
    (p = 1) graph search.
    """
    params = params or BuildParams()
    n = ds.count
    if n < 1:
        raise BuildError("cannot build an index over an empty dataset")
    levels = sample_levels(n, params.level_norm, params.seed)
    up_off, slots = _upper_offsets(levels)
    links0 = np.full((n, params.M0), -1, np.int64)
    deg0 = np.zeros(n, np.int32)
    up_links = np.full((max(slots, 1), params.M), -1, np.int64)
    up_deg = np.zeros(max(slots, 1), np.int32)
    entry, top, dsum, dcount = K.build_graph(
        ds.vectors, levels, up_off, params.M, params.M0, params.efc,
        params.alpha_rank, params.beta_rank, links0, deg0, up_links, up_deg,
    )
    if dcount > 0:
        delta_d = _check_delta(dsum / dcount)
    elif n > params.beta_rank:
        distinct = len(np.unique(ds.vectors, axis=0))
        if distinct < params.beta_rank:
            raise BuildError(
                f"degenerate density statistic: only {distinct} distinct vectors, "
                f"fewer than beta_rank={params.beta_rank}"
            )
        raise BuildError(
            f"no insertion produced {params.beta_rank} construction candidates; "
            "use a larger dataset or a smaller beta_rank"
        )
    else:
        delta_d = 0.0
    return HnswIndex(params, ds.dim, int(entry), int(top), levels, links0, deg0,
                     up_links[:slots], up_deg[:slots], up_off, float(delta_d),
                     ds.vectors, ds.attributes)


# -- persistence ---------------------------------------------------------------


def _serialize(index: HnswIndex) -> bytes:
    p = index.params
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, index.dim, index.count, p.M, p.efc,
                     index.top_layer, index.entry_point, index.delta_d,
                     p.alpha_rank, p.beta_rank, p.seed),
        index.node_levels.astype("<u4").tobytes(),
    ]
    for layer in range(index.top_layer + 1):
        for v in index.layer_members(layer):
            nb = index.neighbors(int(v), layer)
            parts.append(struct.pack("<I", len(nb)))
            parts.append(nb.astype("<u8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save(index: HnswIndex, path) -> None:
    Path(path).write_bytes(_serialize(index))


def load(path, ds: VectorDataset | None = None) -> HnswIndex:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 4:
        raise ChecksumError(f"{path}: file too short to be an index")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt or truncated index file)")
    (magic, version, dim, count, M, efc, top, entry, delta_d,
     alpha, beta, seed) = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise IndexFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"{path}: unsupported format version {version}")
    params = BuildParams(M=M, efc=efc, alpha_rank=alpha, beta_rank=beta, seed=seed)
    off = _HEADER.size
    levels = np.frombuffer(body, "<u4", count, off).astype(np.int32)
    off += 4 * count
    up_off, slots = _upper_offsets(levels)
    links0 = np.full((count, params.M0), -1, np.int64)
    deg0 = np.zeros(count, np.int32)
    up_links = np.full((slots, M), -1, np.int64)
    up_deg = np.zeros(slots, np.int32)
    try:
        for layer in range(top + 1):
            for v in np.flatnonzero(levels >= layer):
                (cnt,) = struct.unpack_from("<I", body, off)
                off += 4
                nb = np.frombuffer(body, "<u8", cnt, off).astype(np.int64)
                off += 8 * cnt
                if layer == 0:
                    links0[v, :cnt] = nb
                    deg0[v] = cnt
                else:
                    r = up_off[v] + layer - 1
                    up_links[r, :cnt] = nb
                    up_deg[r] = cnt
    except (struct.error, ValueError) as exc:
        raise IndexFormatError(f"{path}: malformed adjacency section ({exc})") from None
    if off != len(body):
        raise IndexFormatError(f"{path}: {len(body) - off} trailing bytes")
    index = HnswIndex(params, dim, int(entry), int(top), levels, links0, deg0, up_links,
                      up_deg, up_off, float(delta_d))
    if ds is not None:
        index.attach(ds)
    return index
