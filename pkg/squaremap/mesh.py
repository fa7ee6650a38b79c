from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy import sparse

from .errors import MeshFormatError, TopologyError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# faces smaller than this times bbox-diagonal^2 are rejected on load
DEGENERATE_RTOL = 1e-12


class TriMesh:
    """Indexed triangle mesh with counterclockwise faces.

    Vertex and face arrays are copied on construction and frozen, so a mesh
    can be shared between threads. Derived data (edges, areas, incidence) is
    computed lazily and cached. Faces below a relative area floor are
    rejected unless allow_degenerate is set (decoded geometry images).
    """

    def __init__(
        self,
        vertices,
        faces,
        metadata: Optional[Mapping[str, object]] = None,
        *,
        validate: bool = True,
        allow_degenerate: bool = False,
    ) -> None:
        v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(faces, dtype=np.int64).reshape(-1, 3)
        v.setflags(write=False)
        t.setflags(write=False)
        self.vertices = v
        self.faces = t
        self.metadata: Dict[str, object] = dict(metadata or {})
        if validate:
            self._validate()
            if not allow_degenerate:
                check_degenerate(self)

    def __repr__(self) -> str:
        return f"TriMesh(n={self.n_vertices}, m={self.n_faces})"

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    def _validate(self) -> None:
        t = self.faces
        if t.size == 0:
            return
        if t.min() < 0 or t.max() >= self.n_vertices:
            raise MeshFormatError("face index out of range")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 2] == t[:, 0])):
            raise MeshFormatError("face with a repeated vertex")
        if np.any(self.edge_face_counts > 2):
            raise MeshFormatError("non-manifold edge (more than two adjacent faces)")
        _, counts = np.unique(self.directed_edges, axis=0, return_counts=True)
        if np.any(counts > 1):
            raise MeshFormatError("inconsistent orientation (directed edge used twice)")

    @cached_property
    def directed_edges(self) -> np.ndarray:
        """(3m, 2) array; row 3f+c is the edge from corner c to corner c+1 of face f."""
        t = self.faces
        return np.stack([t, np.roll(t, -1, axis=1)], axis=2).reshape(-1, 2)

    @cached_property
    def _edge_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        undirected = np.sort(self.directed_edges, axis=1)
        edges, inverse, counts = np.unique(
            undirected, axis=0, return_inverse=True, return_counts=True
        )
        return edges, inverse.reshape(-1), counts

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        return self._edge_table[0]

    @property
    def edge_face_counts(self) -> np.ndarray:
        return self._edge_table[2]

    @cached_property
    def face_areas(self) -> np.ndarray:
        v = self.vertices
        t = self.faces
        cr = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return 0.5 * np.linalg.norm(cr, axis=1)

    @cached_property
    def vertex_face_incidence(self) -> sparse.csr_matrix:
        """n x m incidence; row v lists the faces around v."""
        m = self.n_faces
        rows = self.faces.reshape(-1)
        cols = np.repeat(np.arange(m), 3)
        data = np.ones(rows.shape[0], dtype=np.int8)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n_vertices, m))

    def faces_of(self, vertex: int) -> np.ndarray:
        inc = self.vertex_face_incidence
        return inc.indices[inc.indptr[vertex] : inc.indptr[vertex + 1]]

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        edges = self.edges[self.edge_face_counts == 1]
        return np.unique(edges)

    @property
    def is_closed(self) -> bool:
        return self.n_faces > 0 and bool(np.all(self.edge_face_counts == 2))

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_faces

    @property
    def bbox_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))


@dataclass(frozen=True)
class BoundaryLoop:
    """Cyclic vertex list of one boundary component, interior to the left."""

    vertices: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(set(self.vertices)) != len(self.vertices):
            raise TopologyError("boundary loop visits a vertex twice")

    def __len__(self) -> int:
        return len(self.vertices)

    def __iter__(self) -> Iterator[int]:
        return iter(self.vertices)


def face_area(mesh: TriMesh, face: int) -> float:
    if not 0 <= face < mesh.n_faces:
        raise IndexError(f"face {face} out of range for {mesh.n_faces} faces")
    return float(mesh.face_areas[face])


def total_area(mesh: TriMesh) -> float:
    return float(mesh.face_areas.sum())


def normalize_to_unit_area(mesh: TriMesh) -> TriMesh:
    """Uniformly rescale so the total area is 1; the factor is kept in metadata['scale']."""
    area = total_area(mesh)
    if not np.isfinite(area) or area <= 0.0:
        raise MeshFormatError("degenerate mesh with zero total area")
    scale = 1.0 / np.sqrt(area)
    meta = dict(mesh.metadata)
    meta["scale"] = float(meta.get("scale", 1.0)) * scale
    return TriMesh(mesh.vertices * scale, mesh.faces, meta, validate=False)


def genus_of_closed(mesh: TriMesh) -> int:
    if not mesh.is_closed:
        raise TopologyError("mesh is not closed")
    chi = mesh.euler_characteristic
    if chi % 2:
        raise TopologyError(f"odd Euler characteristic {chi}")
    genus = (2 - chi) // 2
    if genus < 0:
        raise TopologyError(f"Euler characteristic {chi} implies a disconnected mesh")
    return genus


def boundary_loops(mesh: TriMesh) -> List[BoundaryLoop]:
    """Boundary components, each oriented with the interior on its left.

    Loops are ordered by their smallest vertex and each starts there.
    """
    n = mesh.n_vertices
    de = mesh.directed_edges
    if de.size == 0:
        return []
    codes = de[:, 0] * n + de[:, 1]
    reverse = de[:, 1] * n + de[:, 0]
    border = de[~np.isin(reverse, codes)]
    successor: Dict[int, int] = {}
    for a, b in border.tolist():
        if a in successor:
            raise TopologyError(f"pinched boundary at vertex {a}")
        successor[a] = b
    loops: List[BoundaryLoop] = []
    seen: set[int] = set()
    for start in sorted(successor):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        v = successor[start]
        while v != start:
            if v in seen or v not in successor:
                raise TopologyError(f"boundary does not close at vertex {v}")
            loop.append(v)
            seen.add(v)
            v = successor[v]
        loops.append(BoundaryLoop(tuple(loop)))
    return loops


def check_degenerate(mesh: TriMesh) -> None:
    limit = DEGENERATE_RTOL * mesh.bbox_diagonal**2
    bad = np.flatnonzero(mesh.face_areas < limit)
    if bad.size:
        raise MeshFormatError(f"{bad.size} degenerate face(s), first is face {int(bad[0])}")


def _has_directed(face: np.ndarray, u: int, v: int) -> bool:
    return any(face[k] == u and face[(k + 1) % 3] == v for k in range(3))


def orient_faces(faces, vertices=None) -> np.ndarray:
    """Make face orientation consistent by breadth-first flips.

    With vertices given, closed components are additionally turned outward
    (positive signed volume). Raises MeshFormatError when no consistent
    orientation exists.
    """
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3).copy()
    m = len(faces)
    edge_faces: Dict[Tuple[int, int], List[int]] = {}
    for fi, (a, b, c) in enumerate(faces.tolist()):
        for u, v in ((a, b), (b, c), (c, a)):
            edge_faces.setdefault((min(u, v), max(u, v)), []).append(fi)
    if any(len(fs) > 2 for fs in edge_faces.values()):
        raise MeshFormatError("non-manifold edge (more than two adjacent faces)")

    visited = np.zeros(m, dtype=bool)
    components: List[List[int]] = []
    flips = 0
    for seed in range(m):
        if visited[seed]:
            continue
        visited[seed] = True
        component = [seed]
        queue = deque([seed])
        while queue:
            fi = queue.popleft()
            a, b, c = faces[fi].tolist()
            for u, v in ((a, b), (b, c), (c, a)):
                for fj in edge_faces[(min(u, v), max(u, v))]:
                    if fj == fi:
                        continue
                    same = _has_directed(faces[fj], u, v)
                    if not visited[fj]:
                        if same:
                            faces[fj] = faces[fj][::-1].copy()
                            flips += 1
                        visited[fj] = True
                        component.append(fj)
                        queue.append(fj)
                    elif same:
                        raise MeshFormatError(
                            "inconsistent orientation cannot be repaired by flipping faces"
                        )
        components.append(component)

    if vertices is not None:
        verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        for component in components:
            comp_faces = faces[component]
            closed = all(
                len(edge_faces[(min(u, v), max(u, v))]) == 2
                for a, b, c in comp_faces.tolist()
                for u, v in ((a, b), (b, c), (c, a))
            )
            if not closed:
                continue
            p0, p1, p2 = (verts[comp_faces[:, k]] for k in range(3))
            volume = np.einsum("ij,ij->i", p0, np.cross(p1, p2)).sum() / 6.0
            if volume < 0:
                faces[component] = faces[component][:, ::-1]
                flips += len(component)
    if flips:
        logger.info("mesh: flipped %d face(s) to repair orientation", flips)
    return faces


@dataclass
class ObjData:
    vertices: np.ndarray
    faces: np.ndarray
    uv: Optional[np.ndarray] = None
    header: Dict[str, str] = field(default_factory=dict)


def _resolve_index(raw: int, count: int) -> int:
    if raw > 0:
        return raw - 1
    if raw < 0:
        return count + raw
    raise ValueError("OBJ indices are 1-based; got 0")


def read_obj(path: PathLike) -> ObjData:
    """Parse the v/vt/f subset of Wavefront OBJ plus '# key value' header comments."""
    path = Path(path)
    if not path.is_file():
        raise MeshFormatError(f"{path}: no such file")
    verts: List[List[float]] = []
    texs: List[List[float]] = []
    faces: List[List[int]] = []
    face_tex: List[Optional[List[int]]] = []
    header: Dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split(None, 1)
            if len(parts) == 2:
                header[parts[0]] = parts[1].strip()
            continue
        tag, *rest = line.split()
        try:
            if tag == "v":
                if len(rest) < 3:
                    raise ValueError("vertex needs three coordinates")
                verts.append([float(x) for x in rest[:3]])
            elif tag == "vt":
                if len(rest) < 2:
                    raise ValueError("texture coordinate needs two values")
                texs.append([float(x) for x in rest[:2]])
            elif tag == "f":
                if len(rest) != 3:
                    raise MeshFormatError(f"{path}:{lineno}: non-triangular face")
                idx: List[int] = []
                tidx: List[int] = []
                for token in rest:
                    parts = token.split("/")
                    idx.append(_resolve_index(int(parts[0]), len(verts)))
                    if len(parts) > 1 and parts[1]:
                        tidx.append(_resolve_index(int(parts[1]), len(texs)))
                faces.append(idx)
                face_tex.append(tidx if len(tidx) == 3 else None)
        except ValueError as exc:
            raise MeshFormatError(f"{path}:{lineno}: {exc}") from exc

    vertices = np.array(verts, dtype=np.float64).reshape(-1, 3)
    face_arr = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if face_arr.size and (face_arr.min() < 0 or face_arr.max() >= len(vertices)):
        raise MeshFormatError(f"{path}: face index out of range")

    uv = None
    if texs and face_tex and all(ft is not None for ft in face_tex):
        tex_arr = np.array(texs, dtype=np.float64)
        tex_idx = np.array(face_tex, dtype=np.int64)
        if tex_idx.max() >= len(tex_arr) or tex_idx.min() < 0:
            raise MeshFormatError(f"{path}: texture index out of range")
        uv = np.full((len(vertices), 2), np.nan)
        uv[face_arr.reshape(-1)] = tex_arr[tex_idx.reshape(-1)]
        per_vertex = tex_arr[tex_idx.reshape(-1)]
        if not np.allclose(uv[face_arr.reshape(-1)], per_vertex, rtol=0.0, atol=0.0):
            raise MeshFormatError(f"{path}: texture coordinates are not per-vertex")
    return ObjData(vertices=vertices, faces=face_arr, uv=uv, header=header)


def load_mesh(path: PathLike) -> TriMesh:
    data = read_obj(path)
    if len(data.faces) == 0:
        raise MeshFormatError(f"{path}: no faces")
    faces = orient_faces(data.faces, data.vertices)
    mesh = TriMesh(data.vertices, faces, {"source": str(path)})
    logger.info("mesh: loaded %s with n=%d m=%d", path, mesh.n_vertices, mesh.n_faces)
    return mesh


def load_param_obj(path: PathLike) -> Tuple[TriMesh, np.ndarray, Dict[str, str]]:
    """Load a map written by save_obj: mesh, per-vertex (u, v), header comments."""
    data = read_obj(path)
    if data.uv is None or np.isnan(data.uv).any():
        raise MeshFormatError(f"{path}: missing per-vertex texture coordinates")
    mesh = TriMesh(data.vertices, data.faces, {"source": str(path)})
    return mesh, data.uv, data.header


def save_obj(
    path: PathLike,
    mesh: TriMesh,
    uv: Optional[np.ndarray] = None,
    header: Optional[Mapping[str, object]] = None,
    *,
    flat: bool = False,
) -> Path:
    """Write an OBJ; with uv, faces reference vt records with the vertex's own index.

    flat=True writes (u, v, 0) as positions instead of the 3D vertices.
    """
    path = Path(path)
    lines: List[str] = []
    for key, value in (header or {}).items():
        lines.append(f"# {key} {value}")
    if flat:
        if uv is None:
            raise ValueError("flat output needs texture coordinates")
        positions = np.column_stack([uv, np.zeros(len(uv))])
    else:
        positions = mesh.vertices
    lines.extend(f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in positions.tolist())
    if uv is not None:
        lines.extend(f"vt {u:.17g} {v:.17g}" for u, v in np.asarray(uv).tolist())
        lines.extend(
            f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}" for a, b, c in mesh.faces.tolist()
        )
    else:
        lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path
