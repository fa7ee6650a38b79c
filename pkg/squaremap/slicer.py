from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from .errors import SlicingError, TopologyError
from .mesh import TriMesh, boundary_loops

logger = logging.getLogger(__name__)

LEFT = 1
RIGHT = -1


@dataclass(frozen=True)
class CutPath:
    """Vertex path along which a mesh is cut.

    Closed paths store each vertex once; the closing edge runs from the last
    vertex back to the first.
    """

    vertices: Tuple[int, ...]
    closed: bool = False

    def __post_init__(self) -> None:
        verts = tuple(int(v) for v in self.vertices)
        if self.closed and len(verts) > 1 and verts[0] == verts[-1]:
            verts = verts[:-1]
        object.__setattr__(self, "vertices", verts)
        if len(set(verts)) != len(verts):
            raise SlicingError("cut path repeats a vertex")
        minimum = 3 if self.closed else 2
        if len(verts) < minimum:
            raise SlicingError(f"cut path needs at least {minimum} vertices, got {len(verts)}")

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def edges(self) -> List[Tuple[int, int]]:
        v = self.vertices
        pairs = list(zip(v[:-1], v[1:]))
        if self.closed:
            pairs.append((v[-1], v[0]))
        return pairs

    def check_on(self, mesh: TriMesh) -> None:
        if max(self.vertices) >= mesh.n_vertices or min(self.vertices) < 0:
            raise SlicingError("cut path references a vertex outside the mesh")
        known = {tuple(e) for e in mesh.edges.tolist()}
        for a, b in self.edges:
            if (min(a, b), max(a, b)) not in known:
                raise SlicingError(f"cut path step {a}->{b} is not a mesh edge")

    def rotated_to(self, vertex: int) -> "CutPath":
        if not self.closed:
            raise SlicingError("only closed paths can be rotated")
        k = self.vertices.index(vertex)
        return CutPath(self.vertices[k:] + self.vertices[:k], closed=True)


@dataclass(frozen=True)
class BoundarySegments:
    """Boundary arcs mapped to the square sides.

    E runs (0,0)->(1,0), F (1,0)->(1,1), G (0,1)->(1,1), H (0,0)->(0,1).
    corners are (B_i, B_j, B_k, B_l) at (0,0), (1,0), (1,1), (0,1).
    """

    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    corners: Tuple[int, int, int, int]
    genus: int

    def __post_init__(self) -> None:
        for name in ("E", "F", "G", "H"):
            arr = np.array(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def boundary(self) -> np.ndarray:
        return np.unique(np.concatenate([self.E, self.F, self.G, self.H]))


@dataclass(frozen=True)
class SlicedMesh:
    mesh: TriMesh
    origin_of: np.ndarray
    segments: Optional[BoundarySegments] = None
    # cut paths in the indices of the uncut input mesh
    cut_paths: Tuple[CutPath, ...] = ()

    @property
    def duplicates(self) -> Dict[int, int]:
        idx = np.flatnonzero(self.origin_of != np.arange(len(self.origin_of)))
        return {int(i): int(self.origin_of[i]) for i in idx}


def principal_axis_extremes(mesh: TriMesh) -> Tuple[int, int]:
    """Vertices with the smallest and largest coordinate along the first principal axis."""
    if mesh.n_vertices < 2:
        raise SlicingError("need at least two vertices")
    centered = mesh.vertices - mesh.vertices.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axis = vt[0]
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    proj = centered @ axis
    # argmin/argmax return the first (lowest) index on ties
    return int(np.argmin(proj)), int(np.argmax(proj))


def edge_graph(mesh: TriMesh) -> sparse.csr_matrix:
    e = mesh.edges
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    return sparse.csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))


def shortest_path(mesh: TriMesh, a: int, b: int) -> CutPath:
    """Dijkstra over the edge graph with Euclidean lengths.

    Among equal-cost predecessors the smallest vertex index wins.
    """
    if a == b:
        raise SlicingError("shortest path endpoints coincide")
    graph = edge_graph(mesh)
    indptr, indices, data = graph.indptr, graph.indices, graph.data
    n = mesh.n_vertices
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    dist[a] = 0.0
    heap: List[Tuple[float, int]] = [(0.0, a)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == b:
            break
        for k in range(indptr[u], indptr[u + 1]):
            v = int(indices[k])
            if done[v]:
                continue
            nd = d + data[k]
            if nd < dist[v] or (nd == dist[v] and u < pred[v]):
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    if not np.isfinite(dist[b]):
        raise TopologyError(f"vertices {a} and {b} are not connected (disconnected mesh)")
    path = [b]
    while path[-1] != a:
        path.append(int(pred[path[-1]]))
    path.reverse()
    logger.debug("slicer: shortest path %d->%d has %d vertices, cost %.6g", a, b, len(path), dist[b])
    return CutPath(tuple(path))


def _classify_sides(mesh: TriMesh, path: CutPath, duplicated: Sequence[int]) -> np.ndarray:
    """Label faces around the cut as LEFT or RIGHT; untouched faces stay 0."""
    faces = mesh.faces
    side = np.zeros(mesh.n_faces, dtype=np.int8)
    de = mesh.directed_edges
    owner: Dict[Tuple[int, int], int] = {
        (int(u), int(v)): k // 3 for k, (u, v) in enumerate(de.tolist())
    }

    def assign(face: int, label: int) -> None:
        if side[face] == -label:
            raise SlicingError(f"cut path crosses itself at face {face}")
        side[face] = label

    # faces holding a path edge: the edge direction decides the side
    for a, b in path.edges:
        f = owner.get((a, b))
        if f is not None:
            assign(f, LEFT)
        f = owner.get((b, a))
        if f is not None:
            assign(f, RIGHT)

    on_path = np.zeros(mesh.n_vertices, dtype=bool)
    on_path[list(path.vertices)] = True
    touching = np.unique(np.concatenate([mesh.faces_of(v) for v in duplicated]))
    pending = {int(f) for f in touching if side[f] == 0}

    # alternate L and R growth through shared off-path vertices
    while pending:
        progressed = False
        for label in (LEFT, RIGHT):
            labelled = touching[side[touching] == label]
            reach = {int(v) for v in faces[labelled].ravel() if not on_path[v]}
            grown = sorted(f for f in pending if any(int(v) in reach for v in faces[f]))
            for f in grown:
                side[f] = label
                pending.discard(f)
            progressed = progressed or bool(grown)
        if not progressed:
            raise SlicingError(
                f"side propagation stalled with {len(pending)} unassigned face(s); "
                "the cut neighbourhood is not manifold"
            )
    return side


def _cut(mesh: TriMesh, path: CutPath, duplicated: Sequence[int]) -> SlicedMesh:
    side = _classify_sides(mesh, path, duplicated)
    dup_set = set(duplicated)
    right_faces = np.flatnonzero(side == RIGHT)
    referenced = set(mesh.faces[right_faces].ravel().tolist()) & dup_set
    used = [v for v in path.vertices if v in referenced]
    n = mesh.n_vertices
    new_index = {v: n + k for k, v in enumerate(used)}

    faces = mesh.faces.copy()
    for f in right_faces:
        faces[f] = [new_index.get(int(v), int(v)) for v in faces[f]]
    origin = np.concatenate([np.arange(n), np.array(used, dtype=np.int64)])
    vertices = np.vstack([mesh.vertices, mesh.vertices[used]])
    cut = TriMesh(vertices, faces, mesh.metadata)
    logger.debug(
        "slicer: cut along %d-vertex %s path, %d duplicate(s), %d right-side face(s)",
        len(path), "closed" if path.closed else "open", len(used), len(right_faces),
    )
    return SlicedMesh(mesh=cut, origin_of=origin, cut_paths=(path,))


def slice_along_path(mesh: TriMesh, p: CutPath, *, duplicate_endpoints: bool = False) -> SlicedMesh:
    """Open the mesh along p.

    Interior path vertices are duplicated; endpoints only when they already lie
    on a boundary, or always with duplicate_endpoints=True. Closed paths
    duplicate every vertex.
    """
    p.check_on(mesh)
    on_boundary = set(mesh.boundary_vertices.tolist())
    verts = p.vertices
    inner = verts if p.closed else verts[1:-1]
    crossing = [v for v in inner if v in on_boundary]
    if crossing:
        raise SlicingError(f"path vertex {crossing[0]} lies on the boundary")
    chosen = set(inner)
    if not p.closed:
        for end in (verts[0], verts[-1]):
            if duplicate_endpoints or end in on_boundary:
                chosen.add(end)
    if not chosen:
        raise SlicingError(
            "single-edge slit of a closed surface has no vertex to duplicate"
        )
    return _cut(mesh, p, [v for v in verts if v in chosen])


def _check_disk(s: SlicedMesh) -> List[int]:
    chi = s.mesh.euler_characteristic
    loops = boundary_loops(s.mesh)
    if chi != 1 or len(loops) != 1:
        raise SlicingError(f"slicing did not produce a disk (chi={chi}, {len(loops)} boundary loop(s))")
    return list(loops[0].vertices)


def _midpoint_vertex(mesh: TriMesh, path: Sequence[int]) -> int:
    pts = mesh.vertices[list(path)]
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    half = cum[-1] / 2.0
    t = min(range(1, len(path) - 1), key=lambda t: (abs(cum[t] - half), cum[t]))
    return int(path[t])


def segments_from_corners(
    mesh: TriMesh,
    corners: Sequence[int],
    genus: int,
    *,
    loop: Optional[Sequence[int]] = None,
) -> BoundarySegments:
    """Split the single boundary loop at the four corners into E, F, G, H."""
    if genus not in (0, 1):
        raise SlicingError(f"genus must be 0 or 1, got {genus}")
    if loop is None:
        loops = boundary_loops(mesh)
        if len(loops) != 1:
            raise SlicingError(f"expected one boundary loop, found {len(loops)}")
        loop = loops[0].vertices
    loop = list(loop)
    bi, bj, bk, bl = (int(c) for c in corners)
    try:
        s = loop.index(bi)
        loop = loop[s:] + loop[:s]
        j, k, l = loop.index(bj), loop.index(bk), loop.index(bl)
    except ValueError as exc:
        raise SlicingError("corner is not on the boundary loop") from exc
    if not 0 < j < k < l:
        raise SlicingError("corners are not in boundary order")
    E = loop[: j + 1]
    F = loop[j : k + 1]
    G = loop[k : l + 1][::-1]
    H = [loop[0]] + loop[l:][::-1]
    paired = (len(E) == len(H) and len(F) == len(G)) if genus == 0 else (len(E) == len(G) and len(F) == len(H))
    if not paired:
        raise SlicingError(
            f"identified segments differ in length (|E|={len(E)} |F|={len(F)} |G|={len(G)} |H|={len(H)})"
        )
    return BoundarySegments(E=E, F=F, G=G, H=H, corners=(bi, bj, bk, bl), genus=genus)


def _pairing_holds(seg: BoundarySegments, origin: np.ndarray) -> bool:
    if seg.genus == 0:
        return bool(
            np.array_equal(origin[seg.E], origin[seg.H]) and np.array_equal(origin[seg.F], origin[seg.G])
        )
    return bool(
        np.array_equal(origin[seg.E], origin[seg.G]) and np.array_equal(origin[seg.F], origin[seg.H])
    )


def assign_corners_and_segments(s: SlicedMesh, genus: int) -> BoundarySegments:
    loop = _check_disk(s)
    origin = s.origin_of
    if genus == 0:
        if len(s.cut_paths) != 1 or s.cut_paths[0].closed:
            raise SlicingError("genus-0 corners need the open cut path")
        path = s.cut_paths[0].vertices
        if len(path) < 3:
            raise SlicingError("cut path too short for four corners")
        w = _midpoint_vertex(s.mesh, path)
        start = loop.index(path[0])
        loop = loop[start:] + loop[:start]
        copies = [t for t, v in enumerate(loop) if origin[v] == w]
        if len(copies) != 2:
            raise SlicingError(f"midpoint vertex {w} appears {len(copies)} time(s) on the boundary")
        j, l = copies
        k = loop.index(path[-1])
        seg = segments_from_corners(s.mesh, (loop[0], loop[j], loop[k], loop[l]), 0, loop=loop)
        if not _pairing_holds(seg, origin):
            raise SlicingError("boundary loop inconsistent with duplicate pairing")
        return seg

    if genus == 1:
        if len(s.cut_paths) != 2:
            raise SlicingError("genus-1 corners need both cut loops")
        loop_a, loop_b = s.cut_paths
        shared = set(loop_a.vertices) & set(loop_b.vertices)
        if len(shared) != 1:
            raise SlicingError("cut loops must share exactly one vertex")
        base = shared.pop()
        a_set = set(loop_a.vertices)
        forward_a = np.array(loop_a.rotated_to(base).vertices + (base,))
        positions = [t for t, v in enumerate(loop) if origin[v] == base]
        if len(positions) != 4:
            raise SlicingError(f"base vertex appears {len(positions)} time(s) on the boundary, expected 4")
        candidates: List[BoundarySegments] = []
        for p in positions:
            rotated = loop[p:] + loop[:p]
            q = sorted((t - p) % len(loop) for t in positions)
            run = rotated[: q[1] + 1]
            if not all(int(origin[v]) in a_set for v in run):
                continue
            try:
                seg = segments_from_corners(
                    s.mesh, tuple(rotated[t] for t in q), 1, loop=rotated
                )
            except SlicingError:
                continue
            if _pairing_holds(seg, origin):
                candidates.append(seg)
        if not candidates:
            raise SlicingError("boundary loop inconsistent with duplicate pairing")
        for seg in candidates:
            if np.array_equal(origin[seg.E], forward_a):
                return seg
        return candidates[0]

    raise SlicingError(f"genus must be 0 or 1, got {genus}")


def slice_genus_zero(mesh: TriMesh) -> SlicedMesh:
    v_min, v_max = principal_axis_extremes(mesh)
    path = shortest_path(mesh, v_min, v_max)
    if len(path) < 3:
        raise SlicingError("principal extremes are adjacent; the cut path needs an interior vertex")
    sliced = slice_along_path(mesh, path)
    segments = assign_corners_and_segments(sliced, 0)
    logger.info(
        "slicer: genus-0 cut %d->%d through %d vertices, n'=%d",
        v_min, v_max, len(path), sliced.mesh.n_vertices,
    )
    return replace(sliced, segments=segments)


def slice_genus_one(mesh: TriMesh, loop_a: CutPath, loop_b: CutPath) -> SlicedMesh:
    """Cut along loop_a into a cylinder, then along loop_b into a disk."""
    if not (loop_a.closed and loop_b.closed):
        raise SlicingError("genus-1 cut needs two closed loops")
    shared = set(loop_a.vertices) & set(loop_b.vertices)
    if len(shared) != 1:
        raise SlicingError(f"loops must share exactly one vertex, they share {len(shared)}")
    base = next(iter(shared))
    loop_a.check_on(mesh)
    loop_b.check_on(mesh)

    cylinder = _cut(mesh, loop_a, list(loop_a.vertices))
    loops = boundary_loops(cylinder.mesh)
    if cylinder.mesh.euler_characteristic != 0 or len(loops) != 2:
        raise SlicingError("cutting along loop a did not produce a cylinder")

    ys = loop_b.rotated_to(base).vertices[1:]
    edges = {tuple(e) for e in cylinder.mesh.edges.tolist()}
    copies = np.flatnonzero(cylinder.origin_of == base).tolist()

    def adjacent(y: int) -> List[int]:
        return [c for c in copies if (min(c, y), max(c, y)) in edges]

    starts, ends = adjacent(ys[0]), adjacent(ys[-1])
    if len(starts) != 1 or len(ends) != 1 or starts[0] == ends[0]:
        raise SlicingError("loop b is not realizable as a path after cutting along loop a")
    path_b = CutPath((starts[0],) + tuple(ys) + (ends[0],))
    opened = slice_along_path(cylinder.mesh, path_b)

    sliced = SlicedMesh(
        mesh=opened.mesh,
        origin_of=cylinder.origin_of[opened.origin_of],
        cut_paths=(loop_a, loop_b),
    )
    segments = assign_corners_and_segments(sliced, 1)
    logger.info(
        "slicer: genus-1 cut along loops of %d and %d vertices, n'=%d",
        len(loop_a), len(loop_b), sliced.mesh.n_vertices,
    )
    return replace(sliced, segments=segments)


def read_loops(path: Union[str, Path]) -> Tuple[CutPath, CutPath]:
    """Two lines of whitespace-separated 0-based vertex indices."""
    path = Path(path)
    if not path.is_file():
        raise SlicingError(f"{path}: no such loops file")
    rows = [line.split() for line in path.read_text().splitlines() if line.strip()]
    if len(rows) != 2:
        raise SlicingError(f"{path}: expected two loops, found {len(rows)}")
    try:
        a, b = (CutPath(tuple(int(x) for x in row), closed=True) for row in rows)
    except ValueError as exc:
        raise SlicingError(f"{path}: {exc}") from exc
    return a, b


def write_loops(path: Union[str, Path], loop_a: Sequence[int], loop_b: Sequence[int]) -> Path:
    path = Path(path)
    path.write_text(" ".join(map(str, loop_a)) + "\n" + " ".join(map(str, loop_b)) + "\n")
    return path
