"""Triangulated disc meshes with boundary electrodes.

The built-in mesher produces a structured ring triangulation: ring ``k`` of
``n_rings`` sits at radius ``k * radius / n_rings`` and carries
``n_electrodes * k`` nodes (unless the boundary density is overridden), and
consecutive rings are stitched by a merge sweep over node angles. With the
default density the mesh has ``n_electrodes * n_rings**2`` triangles and is
invariant under rotation by one electrode slot.
"""

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateElement, InvalidParam

DEGENERATE_AREA = 1e-14


@dataclass(frozen=True)
class EquivalentEllipse:
    a: float
    b: float
    theta: float
    center: np.ndarray

    @property
    def area(self):
        return np.pi * self.a * self.b


def element_gradient_basis(vertices):
    """Constant gradients of the three P1 basis functions on a triangle.

    ``vertices`` is a (3, 2) array. Returns a (3, 2) array whose rows are the
    gradients of the hat functions attached to each vertex.
    """
    grads, area = _gradients(np.asarray(vertices, dtype=float)[None])
    if abs(area[0]) <= DEGENERATE_AREA:
        raise DegenerateElement(f"triangle area {area[0]:.3e} below threshold")
    return grads[0]


def _gradients(tri):
    # tri: (E, 3, 2)
    x, y = tri[..., 0], tri[..., 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        grads = np.stack([gx, gy], axis=2) / area2[:, None, None]
    return grads, 0.5 * area2


def _steiner_params(tri):
    """Vectorised Steiner inellipse parameters for (E, 3, 2) triangles."""
    z = tri[..., 0] + 1j * tri[..., 1]
    g = z.mean(axis=1)
    w = z - g[:, None]
    # roots of p'(z) relative to the centroid: p'(g + t) = 3 t^2 + s2 with s1 = 0
    s2 = w[:, 0] * w[:, 1] + w[:, 1] * w[:, 2] + w[:, 2] * w[:, 0]
    half_focal = np.sqrt(-s2 / 3.0)
    c = np.abs(half_focal)
    x, y = tri[..., 0], tri[..., 1]
    area = 0.5 * np.abs((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    ab = area / (3.0 * np.sqrt(3.0))
    a2 = 0.5 * (c**2 + np.sqrt(c**4 + 4.0 * ab**2))
    a = np.sqrt(a2)
    b = np.sqrt(np.maximum(a2 - c**2, 0.0))
    # b^2 from ab is better conditioned than a^2 - c^2 when c is large
    b = np.where(a > 0, ab / np.where(a > 0, a, 1.0), b)
    theta = np.angle(half_focal)
    theta = np.where(theta <= -np.pi / 2, theta + np.pi, theta)
    theta = np.where(theta > np.pi / 2, theta - np.pi, theta)
    center = np.stack([g.real, g.imag], axis=1)
    return a, b, theta, center, area


def steiner_inellipse(vertices):
    """Steiner inellipse of a triangle (tangent to each side at its midpoint).

    Foci are the roots of p'(z) for p(z) = (z - z1)(z - z2)(z - z3); the
    semi-axes follow from the half focal distance c and ab = T / (3 sqrt 3).
    """
    tri = np.asarray(vertices, dtype=float).reshape(1, 3, 2)
    a, b, theta, center, area = _steiner_params(tri)
    if area[0] <= DEGENERATE_AREA:
        raise DegenerateElement(f"triangle area {area[0]:.3e} below threshold")
    return EquivalentEllipse(float(a[0]), float(b[0]), float(theta[0]), center[0])


def _boundary_edges(elems):
    """Boundary edges oriented along the element (counter-clockwise), in chain order.

    Each boundary loop is walked starting from its smallest node index.
    """
    local = [(0, 1), (1, 2), (2, 0)]
    count = {}
    oriented = {}
    for e, tri in enumerate(elems):
        for i, j in local:
            p, q = int(tri[i]), int(tri[j])
            key = (min(p, q), max(p, q))
            count[key] = count.get(key, 0) + 1
            oriented[key] = (p, q)
    nxt = {}
    for key, c in count.items():
        if c == 1:
            p, q = oriented[key]
            nxt[p] = q
    edges = []
    remaining = set(nxt)
    while remaining:
        start = min(remaining)
        p = start
        while True:
            q = nxt[p]
            edges.append((p, q))
            remaining.discard(p)
            p = q
            if p == start:
                break
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangulated domain with electrodes.

    ``electrodes[l]`` holds indices into ``boundary_edges``.
    """

    nodes: np.ndarray
    elems: np.ndarray
    electrodes: tuple
    radius: float = 1.0
    boundary_edges: np.ndarray = field(default=None)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elems = np.ascontiguousarray(self.elems, dtype=np.int64)
        tri = nodes[elems]
        _, area = _gradients(tri)
        if np.any(area <= DEGENERATE_AREA):
            bad = int(np.argmin(area))
            raise DegenerateElement(f"element {bad} has signed area {area[bad]:.3e}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elems", elems)
        if self.boundary_edges is None:
            object.__setattr__(self, "boundary_edges", _boundary_edges(elems))
        object.__setattr__(self, "electrodes", tuple(np.asarray(e, dtype=np.int64) for e in self.electrodes))
        self._check_electrodes()
        for arr in (self.nodes, self.elems, self.boundary_edges):
            arr.flags.writeable = False

    def _check_electrodes(self):
        nb = len(self.boundary_edges)
        seen = set()
        for l, edges in enumerate(self.electrodes):
            if edges.size == 0:
                raise InvalidParam(f"electrode {l} has no boundary edges")
            if edges.min() < 0 or edges.max() >= nb:
                raise InvalidParam(f"electrode {l} references a non-existent boundary edge")
            if seen & set(edges.tolist()):
                raise InvalidParam(f"electrode {l} overlaps another electrode")
            seen |= set(edges.tolist())
            # consecutive edges must chain end-to-start
            be = self.boundary_edges[edges]
            if np.any(be[1:, 0] != be[:-1, 1]):
                raise InvalidParam(f"electrode {l} is not a contiguous run of boundary edges")

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elems(self):
        return len(self.elems)

    @property
    def n_electrodes(self):
        return len(self.electrodes)

    @cached_property
    def _geometry(self):
        grads, area = _gradients(self.nodes[self.elems])
        return grads, area

    @property
    def grads(self):
        """(E, 3, 2) basis gradients per element."""
        return self._geometry[0]

    @property
    def areas(self):
        return self._geometry[1]

    @cached_property
    def centroids(self):
        return self.nodes[self.elems].mean(axis=1)

    @cached_property
    def local_stiffness(self):
        """(E, 3, 3) unit-conductivity element stiffness blocks area * grad_i . grad_j."""
        g = self.grads
        return self.areas[:, None, None] * np.einsum("eik,ejk->eij", g, g)

    @cached_property
    def boundary_nodes(self):
        return np.unique(self.boundary_edges)

    @cached_property
    def ground_node(self):
        interior = np.setdiff1d(np.arange(self.n_nodes), self.boundary_nodes)
        if interior.size == 0:
            raise InvalidParam("mesh has no interior node to ground")
        d = np.linalg.norm(self.nodes[interior], axis=1)
        return int(interior[np.argmin(d)])

    @cached_property
    def boundary_flags(self):
        """True for elements sharing at least one node with the boundary."""
        on_b = np.zeros(self.n_nodes, dtype=bool)
        on_b[self.boundary_nodes] = True
        return on_b[self.elems].any(axis=1)

    @cached_property
    def adjacency(self):
        """Sparse (E, E) 0/1 matrix of elements sharing an edge."""
        e = self.elems
        edges = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
        edges.sort(axis=1)
        owner = np.tile(np.arange(self.n_elems), 3)
        key = edges[:, 0] * self.n_nodes + edges[:, 1]
        order = np.argsort(key, kind="stable")
        key, owner = key[order], owner[order]
        same = np.nonzero(key[1:] == key[:-1])[0]
        i, j = owner[same], owner[same + 1]
        A = sp.coo_matrix((np.ones(2 * len(i)), (np.r_[i, j], np.r_[j, i])), shape=(self.n_elems,) * 2)
        return A.tocsr()

    @cached_property
    def ellipses(self):
        """Steiner inellipse parameters per element as arrays ``(a, b, theta)``."""
        a, b, theta, _, _ = _steiner_params(self.nodes[self.elems])
        return a, b, theta

    def steiner_inellipse(self, element):
        return steiner_inellipse(self.nodes[self.elems[element]])

    def element_gradient_basis(self, element):
        return element_gradient_basis(self.nodes[self.elems[element]])

    @cached_property
    def electrode_lengths(self):
        be = self.boundary_edges
        h = np.linalg.norm(self.nodes[be[:, 1]] - self.nodes[be[:, 0]], axis=1)
        return np.array([h[edges].sum() for edges in self.electrodes])

    @cached_property
    def electrode_angles(self):
        """Polar angle of each electrode's length-weighted edge-midpoint centroid."""
        be = self.boundary_edges
        out = []
        for edges in self.electrodes:
            p, q = self.nodes[be[edges, 0]], self.nodes[be[edges, 1]]
            h = np.linalg.norm(q - p, axis=1)
            mid = (h[:, None] * 0.5 * (p + q)).sum(axis=0) / h.sum()
            out.append(np.arctan2(mid[1], mid[0]))
        return np.array(out)

    def electrode_points(self, radius=None):
        """Electrode centroids projected to the circle of ``radius`` (default: mesh radius)."""
        r = self.radius if radius is None else radius
        phi = self.electrode_angles
        return r * np.stack([np.cos(phi), np.sin(phi)], axis=1)

    def boundary_point(self, angle):
        """Point on the polygonal boundary in direction ``angle`` with its edge index and edge parameter."""
        be = self.boundary_edges
        p, q = self.nodes[be[:, 0]], self.nodes[be[:, 1]]
        d = np.array([np.cos(angle), np.sin(angle)])
        # solve t * d = p + s (q - p) for each edge
        e = q - p
        det = d[0] * (-e[:, 1]) - d[1] * (-e[:, 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (p[:, 0] * (-e[:, 1]) - p[:, 1] * (-e[:, 0])) / det
            s = (d[0] * p[:, 1] - d[1] * p[:, 0]) / det
        ok = (t > 0) & (s >= -1e-12) & (s <= 1 + 1e-12) & np.isfinite(t)
        k = int(np.nonzero(ok)[0][np.argmin(t[ok])])
        return t[k] * d, k, float(np.clip(s[k], 0.0, 1.0))

    def locate(self, points):
        """Index of the element containing each point (-1 when outside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri = self.nodes[self.elems]
        out = np.full(len(pts), -1, dtype=np.int64)
        v0 = tri[:, 0]
        T = np.stack([tri[:, 1] - v0, tri[:, 2] - v0], axis=2)  # (E, 2, 2)
        Tinv = np.linalg.inv(T)
        for k, x in enumerate(pts):
            lam = np.einsum("eij,ej->ei", Tinv, x - v0)
            inside = (lam[:, 0] >= -1e-12) & (lam[:, 1] >= -1e-12) & (lam.sum(axis=1) <= 1 + 1e-12)
            hit = np.nonzero(inside)[0]
            if hit.size:
                out[k] = hit[0]
        return out

    @cached_property
    def hash(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.elems, dtype="<i8").tobytes())
        for edges in self.electrodes:
            h.update(b"|" + np.ascontiguousarray(edges, dtype="<i8").tobytes())
        return h.hexdigest()[:16]

    @property
    def total_area(self):
        return float(self.areas.sum())

    @cached_property
    def max_diameter(self):
        tri = self.nodes[self.elems]
        d = np.stack([np.linalg.norm(tri[:, i] - tri[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))])
        return float(d.max())


def _stitch(inner, outer):
    """Triangulate the annulus between two rings of node indices (both starting at angle 0)."""
    n_in, n_out = len(inner), len(outer)
    tris = []
    i = j = 0
    while i < n_out or j < n_in:
        # compare next angles (i + 1) / n_out and (j + 1) / n_in exactly
        if j >= n_in or (i < n_out and (i + 1) * n_in <= (j + 1) * n_out):
            tris.append((inner[j % n_in], outer[i % n_out], outer[(i + 1) % n_out]))
            i += 1
        else:
            tris.append((inner[j % n_in], outer[i % n_out], inner[(j + 1) % n_in]))
            j += 1
    return tris


def make_disc_mesh(radius=1.0, n_rings=4, n_electrodes=16, electrode_coverage=0.5, n_boundary=None):
    """Structured triangulation of a disc with equispaced electrodes.

    ``n_boundary`` (default ``n_electrodes * n_rings``) sets the number of
    boundary nodes and must be a multiple of ``n_electrodes``. Each electrode
    occupies ``round(coverage * slot_edges)`` (at least one) consecutive
    boundary edges at the start of its angular slot.
    """
    if n_rings < 2:
        raise InvalidParam(f"n_rings must be >= 2, got {n_rings}")
    if n_electrodes < 2:
        raise InvalidParam(f"n_electrodes must be >= 2, got {n_electrodes}")
    if not 0.0 < electrode_coverage < 1.0:
        raise InvalidParam(f"electrode_coverage must lie in (0, 1), got {electrode_coverage}")
    if radius <= 0:
        raise InvalidParam(f"radius must be positive, got {radius}")
    if n_boundary is None:
        n_boundary = n_electrodes * n_rings
    if n_boundary % n_electrodes or n_boundary < 2 * n_electrodes:
        raise InvalidParam(f"n_boundary={n_boundary} must be a multiple of n_electrodes and >= 2*n_electrodes")
    slot = n_boundary // n_electrodes
    n_elec_edges = max(1, int(round(electrode_coverage * slot)))
    if n_elec_edges >= slot:
        raise InvalidParam("electrode coverage leaves no gap between electrodes at this boundary density")

    counts = [max(3, int(round(n_boundary * k / n_rings))) for k in range(1, n_rings + 1)]
    counts[-1] = n_boundary
    nodes = [(0.0, 0.0)]
    rings = []
    for k, n in enumerate(counts, start=1):
        r = radius * k / n_rings
        phi = 2.0 * np.pi * np.arange(n) / n
        rings.append(np.arange(len(nodes), len(nodes) + n))
        nodes.extend(zip(r * np.cos(phi), r * np.sin(phi)))
    nodes = np.array(nodes)

    tris = [(0, rings[0][i], rings[0][(i + 1) % len(rings[0])]) for i in range(len(rings[0]))]
    for inner, outer in zip(rings[:-1], rings[1:]):
        tris.extend(_stitch(inner, outer))
    elems = np.array(tris, dtype=np.int64)
    _, area = _gradients(nodes[elems])
    flip = area < 0
    elems[flip] = elems[flip][:, [0, 2, 1]]

    outer = rings[-1]
    bedges = np.stack([outer, np.roll(outer, -1)], axis=1)
    electrodes = tuple(np.arange(l * slot, l * slot + n_elec_edges) for l in range(n_electrodes))
    return TriMesh(nodes, elems, electrodes, radius=radius, boundary_edges=bedges)


def write_mesh(path, mesh):
    """Write ``tri-mesh v1`` text format (0-based indices, LF line endings)."""
    lines = [f"tri-mesh v1 {mesh.n_nodes} {mesh.n_elems} {mesh.n_electrodes}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.elems.tolist()]
    lines += [" ".join([str(l)] + [str(e) for e in edges.tolist()]) for l, edges in enumerate(mesh.electrodes)]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_mesh(path, radius=None):
    """Read a ``tri-mesh v1`` file. Boundary edge indices follow canonical chain order."""
    rows = Path(path).read_text().split("\n")
    head = rows[0].split()
    if head[:2] != ["tri-mesh", "v1"] or len(head) != 5:
        raise ValueError(f"{path}: not a tri-mesh v1 file")
    nn, ne, nl = map(int, head[2:])
    body = rows[1:]
    nodes = np.array([[float(v) for v in body[i].split()] for i in range(nn)])
    elems = np.array([[int(v) for v in body[nn + i].split()] for i in range(ne)], dtype=np.int64)
    electrodes = [None] * nl
    for i in range(nl):
        vals = [int(v) for v in body[nn + ne + i].split()]
        electrodes[vals[0]] = np.array(vals[1:], dtype=np.int64)
    if radius is None:
        radius = float(np.linalg.norm(nodes, axis=1).max())
    return TriMesh(nodes, elems, tuple(electrodes), radius=radius)
