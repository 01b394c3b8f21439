"""Conforming triangle meshes with a globally indexed face skeleton.

Faces are stored once, with canonical orientation "lower vertex index
first".  Each element records, per local edge, the global face id and a
sign: +1 when the face's canonical normal is the element's outward
normal, -1 otherwise.  Interior faces therefore carry opposite signs on
their two sides, which is what makes single-valued skeleton unknowns and
signed normal-flux unknowns well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, MeshFormatError


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray        # (nv, 2)
    triangles: np.ndarray       # (nt, 3) vertex indices, CCW
    faces: np.ndarray           # (nf, 2) vertex indices, low index first
    face_of_element: np.ndarray  # (nt, 3, 2) pairs (face id, sign)
    boundary_faces: np.ndarray  # sorted face ids with a single owner
    h: np.ndarray               # (nt,) longest edge per element
    face_elements: np.ndarray = field(repr=False, default=None)  # (nf, 2), -1 = none

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_elements(self):
        return self.triangles.shape[0]

    @property
    def num_faces(self):
        return self.faces.shape[0]

    def element_vertices(self, k):
        return self.vertices[self.triangles[k]]

    def is_boundary(self, f):
        return bool(self._boundary_mask[f])

    @property
    def _boundary_mask(self):
        mask = np.zeros(self.num_faces, dtype=bool)
        mask[self.boundary_faces] = True
        return mask

    @property
    def interior_faces(self):
        mask = np.ones(self.num_faces, dtype=bool)
        mask[self.boundary_faces] = False
        return np.nonzero(mask)[0]

    def face_length(self, f):
        a, b = self.faces[f]
        return float(np.linalg.norm(self.vertices[b] - self.vertices[a]))

    def face_tangent(self, f):
        """Unit tangent along the canonical (low -> high index) direction."""
        a, b = self.faces[f]
        t = self.vertices[b] - self.vertices[a]
        return t / np.linalg.norm(t)

    def face_normal(self, f):
        """Canonical unit normal (tangent rotated by -90 degrees)."""
        t = self.face_tangent(f)
        return np.array([t[1], -t[0]])

    def areas(self):
        v = self.vertices
        t = self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _signed_area(p0, p1, p2):
    return 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))


def build_mesh(vertices, triangles):
    """Assemble and validate a Mesh from vertex coordinates and CCW triangles."""
    vertices = np.ascontiguousarray(np.asarray(vertices, dtype=float))
    triangles = np.ascontiguousarray(np.asarray(triangles, dtype=np.int64))
    if vertices.ndim != 2 or vertices.shape[1] != 2 or vertices.shape[0] < 3:
        raise MeshFormatError("need at least 3 vertices with 2 coordinates each")
    if triangles.ndim != 2 or triangles.shape[1] != 3 or triangles.shape[0] < 1:
        raise MeshFormatError("need at least one triangle of 3 vertex indices")
    nv = vertices.shape[0]
    if triangles.min() < 0 or triangles.max() >= nv:
        raise MeshFormatError(f"vertex index out of range 0..{nv - 1}")

    for k, tri in enumerate(triangles):
        if len(set(tri.tolist())) != 3:
            raise MeshFormatError(f"triangle {k} repeats a vertex")
        area = _signed_area(*vertices[tri])
        if area <= 0.0:
            raise MeshFormatError(f"triangle {k} has negative area (vertices not CCW)")

    # Canonical global face table, sorted lexicographically.
    pair_set = set()
    for tri in triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            pair_set.add((min(a, b), max(a, b)))
    faces = np.array(sorted(pair_set), dtype=np.int64)
    face_id = {tuple(p): i for i, p in enumerate(faces.tolist())}

    nf = faces.shape[0]
    face_of_element = np.zeros((triangles.shape[0], 3, 2), dtype=np.int64)
    owners = [[] for _ in range(nf)]
    for k, tri in enumerate(triangles):
        for loc, (a, b) in enumerate(((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))):
            f = face_id[(min(a, b), max(a, b))]
            # CCW traversal a->b has outward normal rot(b-a); it matches the
            # canonical normal exactly when a < b.
            sign = 1 if a < b else -1
            face_of_element[k, loc] = (f, sign)
            owners[f].append((k, sign))

    boundary = []
    face_elements = -np.ones((nf, 2), dtype=np.int64)
    for f, own in enumerate(owners):
        if len(own) == 1:
            boundary.append(f)
            face_elements[f, 0] = own[0][0]
        elif len(own) == 2:
            if own[0][1] == own[1][1]:
                raise MeshFormatError(f"face {f} traversed twice in the same direction "
                                      "(inconsistent element orientations)")
            face_elements[f] = (own[0][0], own[1][0])
        else:
            raise MeshFormatError(f"face {f} shared by {len(own)} triangles (nonconforming)")

    edge_vec = vertices[triangles[:, [1, 2, 0]]] - vertices[triangles[:, [0, 1, 2]]]
    h = np.linalg.norm(edge_vec, axis=2).max(axis=1)

    return Mesh(vertices=vertices, triangles=triangles, faces=faces,
                face_of_element=face_of_element,
                boundary_faces=np.array(boundary, dtype=np.int64),
                h=h, face_elements=face_elements)


def generate_structured(n, domain=(0.0, 0.0, 1.0, 1.0)):
    """n-by-n grid of an axis-aligned rectangle, each cell split by its diagonal.

    domain is (x0, y0, x1, y1); returns a mesh with 2*n*n triangles.
    """
    if n < 1:
        raise InvalidArgumentError("n must be a positive integer")
    x0, y0, x1, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise InvalidArgumentError("degenerate rectangle")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    vid = lambda i, j: j * (n + 1) + i
    vertices = np.array([[xs[i], ys[j]] for j in range(n + 1) for i in range(n + 1)])
    triangles = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))
    return build_mesh(vertices, triangles)


def refine_uniform(mesh):
    """Split every triangle into four by its edge midpoints."""
    nv = mesh.num_vertices
    mid = mesh.vertices[mesh.faces].mean(axis=1)
    vertices = np.vstack([mesh.vertices, mid])
    # midpoint of face f gets vertex id nv + f
    triangles = []
    for k, tri in enumerate(mesh.triangles):
        m01 = nv + mesh.face_of_element[k, 0, 0]
        m12 = nv + mesh.face_of_element[k, 1, 0]
        m20 = nv + mesh.face_of_element[k, 2, 0]
        v0, v1, v2 = tri
        triangles.extend([(v0, m01, m20), (m01, v1, m12),
                          (m20, m12, v2), (m01, m12, m20)])
    return build_mesh(vertices, triangles)


def write_mesh(mesh):
    """Serialize to the ASCII format: `nv nt`, vertex lines, triangle lines."""
    lines = [f"{mesh.num_vertices} {mesh.num_elements}"]
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    return "\n".join(lines) + "\n"


def read_mesh(text):
    """Parse the ASCII mesh format and validate all invariants."""
    lines = text.splitlines()
    if not lines:
        raise MeshFormatError("empty input", line=1)

    def split_line(idx, count, kind):
        if idx >= len(lines):
            raise MeshFormatError(f"expected {kind} line", line=idx + 1)
        parts = lines[idx].split()
        if len(parts) != count:
            raise MeshFormatError(f"expected {count} fields for {kind}", line=idx + 1)
        return parts

    head = split_line(0, 2, "header `nv nt`")
    try:
        nv, nt = int(head[0]), int(head[1])
    except ValueError:
        raise MeshFormatError("header fields must be integers", line=1)
    if nv < 3 or nt < 1:
        raise MeshFormatError("need nv >= 3 and nt >= 1", line=1)

    vertices = np.zeros((nv, 2))
    for i in range(nv):
        parts = split_line(1 + i, 2, "vertex coordinates")
        try:
            vertices[i] = (float(parts[0]), float(parts[1]))
        except ValueError:
            raise MeshFormatError("vertex coordinates must be decimal numbers", line=2 + i)

    triangles = np.zeros((nt, 3), dtype=np.int64)
    for k in range(nt):
        idx = 1 + nv + k
        parts = split_line(idx, 3, "triangle indices")
        try:
            tri = tuple(int(p) for p in parts)
        except ValueError:
            raise MeshFormatError("triangle indices must be integers", line=idx + 1)
        for v in tri:
            if v < 0 or v >= nv:
                raise MeshFormatError(f"vertex index {v} out of range 0..{nv - 1}",
                                      line=idx + 1)
        if _signed_area(*vertices[list(tri)]) <= 0.0:
            raise MeshFormatError(f"triangle {k} has negative area", line=idx + 1)
        triangles[k] = tri

    try:
        return build_mesh(vertices, triangles)
    except MeshFormatError:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        raise MeshFormatError(str(exc))


@dataclass(frozen=True)
class AffineMap:
    """Pullback map from the reference triangle (0,0),(1,0),(0,1) onto one element."""
    element: int
    jacobian: np.ndarray
    translation: np.ndarray
    det: float
    inv_transpose: np.ndarray

    @classmethod
    def from_mesh(cls, mesh, k):
        p = mesh.element_vertices(k)
        jac = np.column_stack([p[1] - p[0], p[2] - p[0]])
        det = float(np.linalg.det(jac))
        if det <= 0.0:
            raise MeshFormatError(f"element {k} has non-positive Jacobian")
        return cls(element=k, jacobian=jac, translation=p[0].copy(), det=det,
                   inv_transpose=np.linalg.inv(jac).T)

    def to_physical(self, ref_points):
        return np.asarray(ref_points) @ self.jacobian.T + self.translation

    def to_reference(self, phys_points):
        return (np.asarray(phys_points) - self.translation) @ np.linalg.inv(self.jacobian).T
