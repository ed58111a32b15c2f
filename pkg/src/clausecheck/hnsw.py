"""Hierarchical navigable small world graph for approximate nearest neighbors.

A layered proximity graph: every vector lives at layer 0, and each node is
promoted to higher layers with exponentially decaying probability. Queries
greedily descend from the top layer entry point, then run a beam search of
width ef over layer 0. max_degree bounds per-node links (twice that at
layer 0); larger ef trades speed for recall.

Implementation notes, sized for collections in the tens of thousands:

- Vectors sit in one contiguous float32 matrix; distances are computed in
  numpy batches as squared Euclidean via the norm identity. Callers that
  need exact scores re-score the returned ids themselves.
- Layer-0 adjacency is a preallocated int32 matrix plus a degree column, so
  neighbor expansion is a slice, not a list walk. Upper layers are sparse
  and kept as plain dicts.
- New links are chosen with the spread heuristic (prefer candidates closer
  to the query than to anything already selected, which keeps long-range
  edges). Overflow pruning keeps the closest links only; that is cheaper
  and costs no measurable recall at the ef values used here.
- Level assignment draws floor(-ln(U) * mL) from a seedable generator, so
  builds are reproducible.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class HnswParams:
    max_degree: int = 48  # M; layer 0 allows 2*M
    ef_search: int = 500
    ef_construction: int = 200
    level_multiplier: float | None = None  # defaults to 1/ln(M)

    def __post_init__(self):
        if self.max_degree < 2:
            raise ValueError("max_degree must be at least 2")
        if self.ef_construction < self.max_degree:
            raise ValueError("ef_construction must be at least max_degree")

    @property
    def ml(self) -> float:
        if self.level_multiplier is not None:
            return self.level_multiplier
        return 1.0 / math.log(self.max_degree)

    def to_record(self) -> dict:
        return {
            "max_degree": self.max_degree,
            "ef_search": self.ef_search,
            "ef_construction": self.ef_construction,
            "level_multiplier": self.level_multiplier,
        }

    @classmethod
    def from_record(cls, record: dict) -> "HnswParams":
        return cls(
            max_degree=record.get("max_degree", 48),
            ef_search=record.get("ef_search", 500),
            ef_construction=record.get("ef_construction", 200),
            level_multiplier=record.get("level_multiplier"),
        )


class HnswIndex:
    def __init__(self, dim: int, params: HnswParams | None = None,
                 seed: int | None = None):
        self.dim = dim
        self.params = params or HnswParams()
        self._seed = seed
        self._rng = random.Random(seed)
        self._draws = 0

        self._m = self.params.max_degree
        self._m0 = 2 * self.params.max_degree

        capacity = 1024
        # float32 keeps the routing math cheap; callers re-score hits exactly
        self._vectors = np.zeros((capacity, dim), dtype=np.float32)
        self._row_sq = np.zeros(capacity, dtype=np.float32)
        self._links0 = np.zeros((capacity, self._m0), dtype=np.int32)
        self._deg0 = np.zeros(capacity, dtype=np.int32)
        self._levels: list[int] = []
        # upper layers: {layer: {node: int32 array of neighbors}}
        self._upper: dict[int, dict[int, np.ndarray]] = {}
        self._ext_ids: list[int] = []
        self._count = 0
        self._entry = -1
        self._max_level = -1

    def __len__(self) -> int:
        return self._count

    # -- construction -------------------------------------------------------

    def _draw_level(self) -> int:
        u = 1.0 - self._rng.random()  # uniform in (0, 1]
        self._draws += 1
        return int(-math.log(u) * self.params.ml)

    def _grow(self, needed: int) -> None:
        capacity = self._vectors.shape[0]
        if needed <= capacity:
            return
        new_cap = max(capacity * 2, needed)
        for name in ("_vectors", "_links0"):
            old = getattr(self, name)
            grown = np.zeros((new_cap,) + old.shape[1:], dtype=old.dtype)
            grown[:capacity] = old
            setattr(self, name, grown)
        for name in ("_row_sq", "_deg0"):
            old = getattr(self, name)
            grown = np.zeros(new_cap, dtype=old.dtype)
            grown[:capacity] = old
            setattr(self, name, grown)

    def add(self, vector: np.ndarray, ext_id: int) -> None:
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dim,):
            raise ValueError(f"expected a vector of dim {self.dim}")
        node = self._count
        self._grow(node + 1)
        self._vectors[node] = vector
        self._row_sq[node] = float(vector @ vector)
        self._ext_ids.append(ext_id)
        level = self._draw_level()
        self._levels.append(level)
        for layer in range(1, level + 1):
            self._upper.setdefault(layer, {})[node] = np.empty(0, dtype=np.int32)
        self._count += 1

        if self._entry < 0:
            self._entry = node
            self._max_level = level
            return

        query = vector
        q_sq = self._row_sq[node]
        ep = self._entry
        for layer in range(self._max_level, level, -1):
            ep = self._greedy_step(query, q_sq, ep, layer)

        eps = [ep]
        for layer in range(min(level, self._max_level), -1, -1):
            candidates = self._search_layer(
                query, q_sq, eps, layer, self.params.ef_construction
            )
            chosen = self._select_spread(query, candidates, self._m)
            self._set_links(node, layer, chosen)
            if layer == 0:
                self._link_back_layer0(chosen, node)
            else:
                for nb in chosen:
                    self._link_back(nb, node, layer, self._m)
            eps = [nb for _, nb in candidates]

        if level > self._max_level:
            self._entry = node
            self._max_level = level

    def _set_links(self, node: int, layer: int, neighbors: list[int]) -> None:
        if layer == 0:
            deg = len(neighbors)
            self._links0[node, :deg] = neighbors
            self._deg0[node] = deg
        else:
            self._upper[layer][node] = np.asarray(neighbors, dtype=np.int32)

    def _neighbors(self, node: int, layer: int) -> np.ndarray:
        if layer == 0:
            return self._links0[node, : self._deg0[node]]
        return self._upper.get(layer, {}).get(node, _EMPTY_I32)

    def _link_back(self, node: int, new_neighbor: int, layer: int, cap: int) -> None:
        current = self._neighbors(node, layer)
        if len(current) < cap:
            self._upper[layer][node] = np.append(current, np.int32(new_neighbor))
            return
        # over capacity: keep the cap closest links
        ids = np.append(current, np.int32(new_neighbor))
        base = self._vectors[node]
        dists = self._row_sq[ids] - 2.0 * (self._vectors[ids] @ base)
        keep = ids[np.argsort(dists, kind="stable")[:cap]]
        self._set_links(node, layer, list(keep))

    def _link_back_layer0(self, chosen: list[int], new_node: int) -> None:
        """Add reverse links at layer 0, pruning overfull nodes in one batch."""
        cap = self._m0
        deg = self._deg0
        over: list[int] = []
        for nb in chosen:
            d = deg[nb]
            if d < cap:
                self._links0[nb, d] = new_node
                deg[nb] = d + 1
            else:
                over.append(nb)
        if not over:
            return
        nodes = np.asarray(over, dtype=np.int64)
        cand = np.concatenate(
            [
                self._links0[nodes, :cap],
                np.full((len(nodes), 1), new_node, dtype=np.int32),
            ],
            axis=1,
        )
        base = self._vectors[nodes]
        gathered = self._vectors[cand]
        # per-row squared distances; the constant own-norm term cannot change
        # each row's ordering, so it is omitted
        dists = self._row_sq[cand] - 2.0 * np.einsum("nd,nkd->nk", base, gathered)
        order = np.argsort(dists, axis=1, kind="stable")[:, :cap]
        self._links0[nodes] = np.take_along_axis(cand, order, axis=1)

    def _select_spread(
        self, query: np.ndarray, candidates: list[tuple[float, int]], m: int
    ) -> list[int]:
        """Pick up to m links, preferring directions not already covered.

        A candidate is taken only while it is closer to the query than to
        every previously selected node; remaining slots are filled with the
        nearest rejected candidates.
        """
        if len(candidates) <= m:
            return [nb for _, nb in candidates]
        ids = np.array([nb for _, nb in candidates], dtype=np.int64)
        dq = np.array([d for d, _ in candidates], dtype=np.float64)
        sub = self._vectors[ids]
        sq = self._row_sq[ids]
        # pairwise squared distances among candidates
        pair = sq[:, None] + sq[None, :] - 2.0 * (sub @ sub.T)
        dominated = np.zeros(len(ids), dtype=bool)
        taken = np.zeros(len(ids), dtype=bool)
        selected: list[int] = []
        for pos in range(len(ids)):
            if len(selected) == m:
                break
            if dominated[pos]:
                continue
            selected.append(int(ids[pos]))
            taken[pos] = True
            dominated |= pair[pos] < dq
        if len(selected) < m:
            # backfill with the nearest rejected candidates
            for pos in range(len(ids)):
                if len(selected) == m:
                    break
                if not taken[pos]:
                    selected.append(int(ids[pos]))
                    taken[pos] = True
        return selected

    # -- search -------------------------------------------------------------

    def _distances(self, ids: np.ndarray, query: np.ndarray, q_sq: float) -> np.ndarray:
        d = self._row_sq[ids] + q_sq - 2.0 * (self._vectors[ids] @ query)
        np.maximum(d, 0.0, out=d)
        return d

    def _greedy_step(self, query: np.ndarray, q_sq: float, start: int,
                     layer: int) -> int:
        current = start
        current_dist = float(self._distances(np.array([start]), query, q_sq)[0])
        improved = True
        while improved:
            improved = False
            nbrs = self._neighbors(current, layer)
            if len(nbrs) == 0:
                break
            dists = self._distances(nbrs, query, q_sq)
            best = int(np.argmin(dists))
            if dists[best] < current_dist:
                current = int(nbrs[best])
                current_dist = float(dists[best])
                improved = True
        return current

    def _search_layer(
        self,
        query: np.ndarray,
        q_sq: float,
        entry_points: list[int],
        layer: int,
        ef: int,
    ) -> list[tuple[float, int]]:
        """Beam search at one layer; returns (dist_sq, node) sorted ascending.

        Up to a handful of beam nodes are expanded per round so neighbor
        distances come out of one numpy batch; a node is only expanded while
        it beats the current ef-th best, and batch entries are consumed in
        ascending distance order so the scan can stop at the first reject.
        """
        visited = np.zeros(self._count, dtype=bool)
        eps = np.asarray(entry_points, dtype=np.int64)
        visited[eps] = True
        dists = self._distances(eps, query, q_sq)

        candidates = [(float(d), int(n)) for d, n in zip(dists.tolist(), eps.tolist())]
        heapq.heapify(candidates)
        results = [(-d, n) for d, n in candidates]
        heapq.heapify(results)
        while len(results) > ef:
            heapq.heappop(results)

        links0 = self._links0
        deg0 = self._deg0
        round_width = 12
        while candidates:
            seeds: list[int] = []
            exhausted = False
            while candidates and len(seeds) < round_width:
                dist, node = heapq.heappop(candidates)
                if len(results) >= ef and dist > -results[0][0]:
                    exhausted = True
                    break
                seeds.append(node)
            if not seeds:
                break
            if layer == 0:
                parts = [links0[s, : deg0[s]] for s in seeds]
            else:
                parts = [self._neighbors(s, layer) for s in seeds]
            nbrs = parts[0] if len(parts) == 1 else np.concatenate(parts)
            if nbrs.size:
                fresh = np.unique(nbrs[~visited[nbrs]])
                if fresh.size:
                    visited[fresh] = True
                    fresh_dists = self._distances(fresh, query, q_sq)
                    order = np.argsort(fresh_dists, kind="stable")
                    sorted_dists = fresh_dists[order].tolist()
                    sorted_ids = fresh[order].tolist()
                    worst = -results[0][0]
                    full = len(results) >= ef
                    for fd, nb in zip(sorted_dists, sorted_ids):
                        if full and fd >= worst:
                            break
                        heapq.heappush(candidates, (fd, nb))
                        heapq.heappush(results, (-fd, nb))
                        if len(results) > ef:
                            heapq.heappop(results)
                        worst = -results[0][0]
                        full = len(results) >= ef
            if exhausted:
                break
        out = [(-d, node) for d, node in results]
        out.sort()
        return out

    def search(
        self,
        query: np.ndarray,
        k: int,
        ef: int | None = None,
        allowed_ext: set[int] | None = None,
    ) -> list[tuple[int, float]]:
        """Return up to k (ext_id, distance) pairs, nearest first.

        ef is clamped to at least k. With an allowed_ext filter the beam
        runs unfiltered and hits are filtered afterwards, so heavily
        restrictive filters should be brute-forced by the caller instead.
        """
        if self._count == 0:
            return []
        query = np.asarray(query, dtype=np.float32)
        if query.shape != (self.dim,):
            raise ValueError(f"expected a query of dim {self.dim}")
        ef = max(ef if ef is not None else self.params.ef_search, k)
        q_sq = float(query @ query)

        ep = self._entry
        for layer in range(self._max_level, 0, -1):
            ep = self._greedy_step(query, q_sq, ep, layer)
        found = self._search_layer(query, q_sq, [ep], 0, ef)

        out: list[tuple[int, float]] = []
        for dist_sq, node in found:
            ext = self._ext_ids[node]
            if allowed_ext is not None and ext not in allowed_ext:
                continue
            out.append((ext, math.sqrt(dist_sq)))
            if len(out) == k:
                break
        return out

    # -- invariants and persistence -----------------------------------------

    def max_observed_degree(self, layer: int) -> int:
        if self._count == 0:
            return 0
        if layer == 0:
            return int(self._deg0[: self._count].max())
        nodes = self._upper.get(layer, {})
        return max((len(v) for v in nodes.values()), default=0)

    def degree_bounds_ok(self) -> bool:
        if self.max_observed_degree(0) > self._m0:
            return False
        for layer in self._upper:
            if self.max_observed_degree(layer) > self._m:
                return False
        return True

    def save(self, path: str | Path) -> None:
        """Write the graph (not the vectors) as a rebuildable cache file."""
        state = {
            "dim": self.dim,
            "params": self.params.to_record(),
            "seed": self._seed,
            "draws": self._draws,
            "count": self._count,
            "entry": self._entry,
            "max_level": self._max_level,
            "levels": self._levels,
            "ext_ids": self._ext_ids,
            "links0": [
                self._links0[i, : self._deg0[i]].tolist() for i in range(self._count)
            ],
            "upper": {
                str(layer): {str(n): v.tolist() for n, v in nodes.items()}
                for layer, nodes in self._upper.items()
            },
        }
        Path(path).write_text(json.dumps(state), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, vectors: np.ndarray) -> "HnswIndex":
        """Reattach a saved graph to its vectors (row i belongs to node i)."""
        state = json.loads(Path(path).read_text(encoding="utf-8"))
        count = state["count"]
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.shape != (count, state["dim"]):
            raise ValueError(
                f"index holds {count} nodes of dim {state['dim']}, "
                f"got vectors of shape {vectors.shape}"
            )
        index = cls(
            dim=state["dim"],
            params=HnswParams.from_record(state["params"]),
            seed=state["seed"],
        )
        index._grow(max(count, 1))
        index._vectors[:count] = vectors
        # same per-row accumulation as add(), so distances match exactly
        for i in range(count):
            row = index._vectors[i]
            index._row_sq[i] = float(row @ row)
        index._count = count
        index._entry = state["entry"]
        index._max_level = state["max_level"]
        index._levels = list(state["levels"])
        index._ext_ids = list(state["ext_ids"])
        for i, nbrs in enumerate(state["links0"]):
            index._links0[i, : len(nbrs)] = nbrs
            index._deg0[i] = len(nbrs)
        index._upper = {
            int(layer): {
                int(n): np.asarray(v, dtype=np.int32) for n, v in nodes.items()
            }
            for layer, nodes in state["upper"].items()
        }
        # replay the level draws so future inserts continue the same stream
        for _ in range(state["draws"]):
            index._rng.random()
        index._draws = state["draws"]
        return index


_EMPTY_I32 = np.empty(0, dtype=np.int32)


def build_index(
    vectors: np.ndarray,
    ext_ids: list[int],
    params: HnswParams | None = None,
    seed: int | None = None,
) -> HnswIndex:
    """Bulk-build an index over (row-aligned) vectors and external ids."""
    vectors = np.asarray(vectors, dtype=np.float32)
    index = HnswIndex(dim=vectors.shape[1], params=params, seed=seed)
    for row, ext_id in zip(vectors, ext_ids):
        index.add(row, ext_id)
    return index
