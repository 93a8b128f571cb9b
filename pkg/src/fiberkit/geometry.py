"""Tetrahedral mesh model and synthetic geometries.

Meshes are built on a Kuhn (Freudenthal) subdivision of a regular grid:
every cube is split into six tetrahedra sharing the main diagonal. The
subdivision is conforming across cubes, has no obtuse dihedral angles and
keeps a fixed shape quality independent of resolution, which is what the
Laplace/Helmholtz solvers (M-matrix stiffness) and the eikonal local solver
rely on. Curved myocardial walls are obtained by keeping the tetrahedra whose
centroid lies inside the implicit domain.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from .exceptions import MeshError, ValidationError


class SurfaceLabel(enum.IntEnum):
    EPI = 1
    ENDO_LV = 2
    ENDO_RV = 3
    BASE = 4
    APEX = 5

    @classmethod
    def parse(cls, name):
        """Accept ``EndoLV``, ``endo_lv``, ``ENDO_LV`` or an integer."""
        if isinstance(name, (int, np.integer)):
            return cls(int(name))
        key = str(name).replace("_", "").replace("-", "").upper()
        for member in cls:
            if member.name.replace("_", "") == key:
                return member
        raise ValidationError(f"unknown surface label {name!r}")


class BoxFace(enum.IntEnum):
    XMIN = 11
    XMAX = 12
    YMIN = 13
    YMAX = 14
    ZMIN = 15
    ZMAX = 16


def parse_label(name):
    """Resolve a surface or box-face label given by name or integer code."""
    if isinstance(name, (SurfaceLabel, BoxFace)):
        return name
    if isinstance(name, (int, np.integer)) or str(name).lstrip("-").isdigit():
        code = int(name)
        for enum_cls in (SurfaceLabel, BoxFace):
            if code in enum_cls._value2member_map_:
                return enum_cls(code)
        raise ValidationError(f"unknown surface label {name!r}")
    key = str(name).replace("_", "").replace("-", "").upper()
    for enum_cls in (SurfaceLabel, BoxFace):
        for member in enum_cls:
            if member.name.replace("_", "") == key:
                return member
    raise ValidationError(f"unknown surface label {name!r}")


class RegionLabel(enum.IntEnum):
    LV = 1
    RV = 2


class Layer(enum.IntEnum):
    ENDO = 1
    MID = 2
    EPI = 3


KNOWN_FACET_LABELS = frozenset(int(v) for v in itertools.chain(SurfaceLabel, BoxFace))
KNOWN_REGION_LABELS = frozenset(int(v) for v in RegionLabel)

# local faces of a positively oriented tet, ordered so that normals point outward
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def _signed_volumes(nodes, tets):
    a = nodes[tets[:, 0]]
    d1 = nodes[tets[:, 1]] - a
    d2 = nodes[tets[:, 2]] - a
    d3 = nodes[tets[:, 3]] - a
    return np.einsum("ij,ij->i", d1, np.cross(d2, d3)) / 6.0


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Immutable tetrahedral mesh.

    Attributes
    ----------
    nodes : (n, 3) float array, meters.
    tets : (m, 4) int array, positively oriented.
    facets : (k, 3) int array, boundary triangles with outward orientation.
    facet_labels : (k,) int array, :class:`SurfaceLabel` or :class:`BoxFace`.
    cell_regions : (m,) int array, :class:`RegionLabel`.
    """

    nodes: np.ndarray
    tets: np.ndarray
    facets: np.ndarray
    facet_labels: np.ndarray
    cell_regions: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "nodes", _readonly(self.nodes, float))
        object.__setattr__(self, "tets", _readonly(self.tets, np.int64))
        object.__setattr__(self, "facets", _readonly(np.reshape(self.facets, (-1, 3)), np.int64))
        object.__setattr__(self, "facet_labels", _readonly(self.facet_labels, np.int64))
        regions = self.cell_regions
        if regions is None:
            regions = np.full(len(self.tets), int(RegionLabel.LV))
        object.__setattr__(self, "cell_regions", _readonly(regions, np.int64))
        self._check_shapes()

    def _check_shapes(self):
        n = len(self.nodes)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise ValidationError("nodes must have shape (n, 3)")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise ValidationError("tets must have shape (m, 4)")
        if len(self.facet_labels) != len(self.facets):
            raise ValidationError("one label per boundary facet required")
        if len(self.cell_regions) != len(self.tets):
            raise ValidationError("one region label per tet required")
        for name, arr in (("tet", self.tets), ("facet", self.facets)):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise ValidationError(f"{name} references a node index outside [0, {n})")
        if not np.all(np.isfinite(self.nodes)):
            raise ValidationError("non-finite node coordinates")
        bad = set(np.unique(self.facet_labels).tolist()) - KNOWN_FACET_LABELS
        if bad:
            raise ValidationError(f"unknown surface label(s) {sorted(bad)}")
        bad = set(np.unique(self.cell_regions).tolist()) - KNOWN_REGION_LABELS
        if bad:
            raise ValidationError(f"unknown region label(s) {sorted(bad)}")

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_tets(self):
        return len(self.tets)

    @cached_property
    def signed_volumes(self):
        return _signed_volumes(self.nodes, self.tets)

    @cached_property
    def volumes(self):
        return np.abs(self.signed_volumes)

    @cached_property
    def node_volumes(self):
        """Lumped (barycentric) volume attached to each node."""
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.tets.ravel(), np.repeat(self.volumes / 4.0, 4))
        return w

    @cached_property
    def facet_normals(self):
        """Unit outward normals of the boundary facets."""
        p = self.nodes[self.facets]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def facet_areas(self):
        p = self.nodes[self.facets]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    @cached_property
    def node_adjacency(self):
        """Symmetric node-node adjacency (CSR, no diagonal) through tet edges."""
        pairs = np.array(list(itertools.combinations(range(4), 2)))
        i = self.tets[:, pairs[:, 0]].ravel()
        j = self.tets[:, pairs[:, 1]].ravel()
        a = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(self.n_nodes,) * 2)
        a = ((a + a.T) > 0).astype(np.int8).tocsr()
        a.setdiag(0)
        a.eliminate_zeros()
        return a

    @cached_property
    def node_to_tets(self):
        """CSR incidence matrix of shape (n_nodes, n_tets)."""
        rows = self.tets.ravel()
        cols = np.repeat(np.arange(self.n_tets), 4)
        return sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)),
                             shape=(self.n_nodes, self.n_tets))

    def nodes_on(self, *labels):
        """Sorted node indices lying on facets with any of ``labels``.

        ``SurfaceLabel.EPI`` includes the apex patch, which is a sub-patch of
        the epicardium.
        """
        wanted = set()
        for lab in labels:
            lab = parse_label(lab)
            wanted.add(int(lab))
            if lab == SurfaceLabel.EPI:
                wanted.add(int(SurfaceLabel.APEX))
        mask = np.isin(self.facet_labels, sorted(wanted))
        return np.unique(self.facets[mask])

    def node_regions(self):
        """Per-node region: RV only when every incident tet is RV."""
        is_lv = (self.cell_regions == RegionLabel.LV).astype(float)
        lv_count = self.node_to_tets @ is_lv
        out = np.full(self.n_nodes, int(RegionLabel.RV))
        out[lv_count > 0] = int(RegionLabel.LV)
        return out

    def boundary_volume(self):
        """Enclosed volume from the labeled boundary via the divergence theorem."""
        p = self.nodes[self.facets]
        return np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0

    def validate(self):
        """Check orientation and that the labeled facets are exactly the boundary."""
        if np.any(self.signed_volumes <= 0):
            raise MeshError(f"{int(np.sum(self.signed_volumes <= 0))} tets are not positively oriented")
        faces = boundary_faces(self.tets)
        have = {tuple(sorted(f)) for f in self.facets.tolist()}
        want = {tuple(sorted(f)) for f in faces.tolist()}
        if len(have) != len(self.facets):
            raise MeshError("duplicate boundary facets")
        if have != want:
            raise MeshError(
                f"surface labels do not cover the boundary exactly once "
                f"({len(want - have)} unlabeled, {len(have - want)} not on boundary)")
        return self

    def renumbered(self, perm):
        """Mesh with node ``i`` moved to position ``perm[i]``."""
        perm = np.asarray(perm)
        nodes = np.empty_like(self.nodes)
        nodes[perm] = self.nodes
        return TetMesh(nodes, perm[self.tets], perm[self.facets],
                       self.facet_labels, self.cell_regions)


def boundary_faces(tets):
    """Outward-oriented faces that belong to exactly one tet."""
    faces = tets[:, _TET_FACES].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inv.ravel()] == 1]


def orient_tets(nodes, tets):
    """Swap two vertices of negatively oriented tets. Returns (tets, n_flipped)."""
    tets = np.array(tets, dtype=np.int64, copy=True)
    neg = _signed_volumes(nodes, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets, int(neg.sum())


def dihedral_angles(nodes, tets):
    """(m, 6) interior dihedral angles in radians."""
    p = nodes[tets]
    normals = []
    for f in _TET_FACES:
        a, b, c = p[:, f[0]], p[:, f[1]], p[:, f[2]]
        n = np.cross(b - a, c - a)
        normals.append(n / np.linalg.norm(n, axis=1, keepdims=True))
    out = []
    for i, j in itertools.combinations(range(4), 2):
        cosang = -np.einsum("ij,ij->i", normals[i], normals[j])
        out.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return np.stack(out, axis=1)


def aspect_ratios(nodes, tets):
    """Longest edge over inradius scaled so that a regular tet gives 1."""
    p = nodes[tets]
    edges = [np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in itertools.combinations(range(4), 2)]
    lmax = np.max(edges, axis=0)
    vol = np.abs(_signed_volumes(nodes, tets))
    area = 0.0
    for f in _TET_FACES:
        a, b, c = p[:, f[0]], p[:, f[1]], p[:, f[2]]
        area = area + 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    inradius = 3.0 * vol / area
    return lmax / inradius / (2.0 * np.sqrt(6.0))


def check_quality(mesh, min_dihedral_deg=5.0, max_aspect=20.0):
    """Raise :class:`MeshError` if any element fails the quality gate."""
    dmin = np.degrees(dihedral_angles(mesh.nodes, mesh.tets).min())
    amax = aspect_ratios(mesh.nodes, mesh.tets).max()
    if dmin <= min_dihedral_deg or amax > max_aspect:
        raise MeshError(f"mesh quality gate failed: min dihedral {dmin:.2f} deg, max aspect {amax:.2f}")
    return dmin, amax


# ---------------------------------------------------------------- grids

def _kuhn_grid(shape, spacing, origin):
    nx, ny, nz = shape
    hx, hy, hz = spacing
    xs = origin[0] + hx * np.arange(nx + 1)
    ys = origin[1] + hy * np.arange(ny + 1)
    zs = origin[2] + hz * np.arange(nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.column_stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")])

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    I, J, K = I.ravel(order="F"), J.ravel(order="F"), K.ravel(order="F")
    tets = []
    for perm in itertools.permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for ax in perm:
            step = path[-1].copy()
            step[ax] = 1
            path.append(step)
        tets.append(np.stack([nid(I + o[0], J + o[1], K + o[2]) for o in path], axis=1))
    tets = np.stack(tets, axis=1).reshape(-1, 4)
    tets, _ = orient_tets(nodes, tets)
    return nodes, tets


def box_mesh(shape, lengths=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Structured Kuhn mesh of an axis-aligned box with faces labeled by :class:`BoxFace`."""
    shape = tuple(int(s) for s in shape)
    if min(shape) < 1:
        raise MeshError("box mesh needs at least one cell per direction")
    spacing = [L / n for L, n in zip(lengths, shape)]
    nodes, tets = _kuhn_grid(shape, spacing, origin)
    facets = boundary_faces(tets)
    c = nodes[facets].mean(axis=1)
    lo = np.asarray(origin, float)
    hi = lo + np.asarray(lengths, float)
    tol = 1e-9 * max(lengths)
    labels = np.zeros(len(facets), dtype=np.int64)
    for ax in range(3):
        labels[np.abs(c[:, ax] - lo[ax]) < tol] = BoxFace.XMIN + 2 * ax
        labels[np.abs(c[:, ax] - hi[ax]) < tol] = BoxFace.XMAX + 2 * ax
    return TetMesh(nodes, tets, facets, labels).validate()


# ------------------------------------------------------- biventricle

@dataclass(frozen=True)
class BiventricleShape:
    """Implicit description of two nested truncated ellipsoids (meters)."""

    lv_radii: tuple
    rv_radii: tuple
    lv_wall: float
    rv_wall: float
    rv_center_x: float
    base_z: float

    @staticmethod
    def _inside(p, center, radii):
        q = (p - np.asarray(center)) / np.asarray(radii)
        return np.einsum("ij,ij->i", q, q) < 1.0

    def lv_cavity(self, p):
        return self._inside(p, (0, 0, 0), self.lv_radii) & (p[:, 2] < self.base_z)

    def lv_outer(self, p):
        return self._inside(p, (0, 0, 0), np.add(self.lv_radii, self.lv_wall))

    def rv_cavity(self, p):
        inner = self._inside(p, (self.rv_center_x, 0, 0), self.rv_radii)
        return inner & ~self.lv_outer(p) & (p[:, 2] < self.base_z)

    def rv_outer(self, p):
        return self._inside(p, (self.rv_center_x, 0, 0), np.add(self.rv_radii, self.rv_wall))

    def myocardium(self, p):
        solid = (self.lv_outer(p) | self.rv_outer(p)) & (p[:, 2] <= self.base_z)
        return solid & ~self.lv_cavity(p) & ~self.rv_cavity(p)


def generate_idealized_biventricle(
    lv_radii=(1.6e-3, 1.6e-3, 4.0e-3),
    rv_radii=(2.5e-3, 2.2e-3, 3.6e-3),
    wall_thicknesses=(1.0e-3, 0.6e-3),
    base_cut_height=0.0,
    target_edge_length=0.2e-3,
    rv_center_x=-2.3e-3,
    apex_radius=0.5e-3,
):
    """Labeled tetrahedral mesh of an idealized biventricular myocardium.

    ``lv_radii`` and ``rv_radii`` are the endocardial semi-axes (x, y, z) of the
    two cavities; the outer surfaces are offset by ``wall_thicknesses`` = (LV,
    RV). Both ellipsoids are centered at ``z = 0`` and cut by the plane
    ``z = base_cut_height``; the RV sits on the ``-x`` side at
    ``rv_center_x``. ``target_edge_length`` is the grid spacing.

    The default dimensions give a horizontal base extent of 8 mm.
    """
    lv_radii = tuple(float(r) for r in lv_radii)
    rv_radii = tuple(float(r) for r in rv_radii)
    lv_wall, rv_wall = (float(t) for t in wall_thicknesses)
    h = float(target_edge_length)
    if min(lv_radii) <= 0 or min(rv_radii) <= 0:
        raise MeshError("ellipsoid radii must be positive")
    if h <= 0:
        raise MeshError("target_edge_length must be positive")
    if lv_wall <= 0 or rv_wall <= 0:
        raise MeshError("wall thicknesses must be positive")
    if lv_wall >= min(lv_radii) or rv_wall >= min(rv_radii):
        raise MeshError("wall thickness must be smaller than the inner radius")
    if rv_center_x - rv_radii[0] >= -(lv_radii[0] + lv_wall):
        raise MeshError("RV cavity does not extend beyond the LV free wall; RV wall would be empty")
    if not (-lv_radii[2] < base_cut_height < lv_radii[2]):
        raise MeshError("base_cut_height must cut through the LV cavity")

    shape = BiventricleShape(lv_radii, rv_radii, lv_wall, rv_wall, float(rv_center_x),
                             float(base_cut_height))
    lv_out = np.add(lv_radii, lv_wall)
    rv_out = np.add(rv_radii, rv_wall)
    lo = np.array([min(-lv_out[0], rv_center_x - rv_out[0]),
                   -max(lv_out[1], rv_out[1]),
                   -max(lv_out[2], rv_out[2])]) - h
    hi_xy = np.array([max(lv_out[0], rv_center_x + rv_out[0]), max(lv_out[1], rv_out[1])]) + h
    # the grid top coincides with the base plane so Base facets are exactly planar
    nz = int(np.ceil((base_cut_height - lo[2]) / h))
    lo[2] = base_cut_height - nz * h
    nx = int(np.ceil((hi_xy[0] - lo[0]) / h))
    ny = int(np.ceil((hi_xy[1] - lo[1]) / h))
    # center the grid horizontally so the mesh is symmetric in y
    lo[1] = -0.5 * ny * h
    nodes, grid_tets = _kuhn_grid((nx, ny, nz), (h, h, h), lo)
    centroids = nodes[grid_tets].mean(axis=1)
    keep = shape.myocardium(centroids)
    if not keep.any():
        raise MeshError("no elements inside the myocardium; edge length too coarse")
    keep[keep] = _largest_face_component(grid_tets[keep])
    facets, outside = _boundary_with_neighbors(grid_tets, keep)
    labels = _label_facets(nodes, facets, outside, centroids, shape, h)
    tets = grid_tets[keep]
    regions = np.where(shape.lv_outer(centroids[keep]), RegionLabel.LV, RegionLabel.RV)
    used = np.unique(tets)
    remap = np.full(len(nodes), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes, tets, facets = nodes[used], remap[tets], remap[facets]
    labels = _mark_apex(nodes, facets, labels, apex_radius)
    mesh = TetMesh(nodes, tets, facets, labels, regions).validate()
    missing = set(SurfaceLabel) - {SurfaceLabel(v) for v in np.unique(labels)}
    if missing:
        raise MeshError(f"surface labels missing from generated mesh: {sorted(m.name for m in missing)}")
    check_quality(mesh)
    return mesh


def _face_pairs(tets):
    """Pairs of tet indices sharing a face, plus per-face (tet, local face) ownership."""
    faces = np.sort(tets[:, _TET_FACES].reshape(-1, 3), axis=1)
    _, inv = np.unique(faces, axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    s = inv[order]
    same = s[1:] == s[:-1]
    return order[:-1][same], order[1:][same]


def _largest_face_component(tets):
    """Boolean mask of the tets in the largest face-connected component."""
    a, b = _face_pairs(tets)
    g = sp.coo_matrix((np.ones(len(a)), (a // 4, b // 4)), shape=(len(tets),) * 2)
    _, comp = connected_components(g, directed=False)
    return comp == np.argmax(np.bincount(comp))


def _boundary_with_neighbors(grid_tets, keep):
    """Outward faces of the kept tets and the grid tet across each (-1 if none)."""
    a, b = _face_pairs(grid_tets)
    n_faces = 4 * len(grid_tets)
    other = np.full(n_faces, -1, dtype=np.int64)
    other[a] = b // 4
    other[b] = a // 4
    owner = np.repeat(np.arange(len(grid_tets)), 4)
    nb_kept = np.zeros(n_faces, dtype=bool)
    has = other >= 0
    nb_kept[has] = keep[other[has]]
    sel = keep[owner] & ~nb_kept
    faces = grid_tets[:, _TET_FACES].reshape(-1, 3)
    return faces[sel], other[sel]


def _label_facets(nodes, facets, outside, centroids, shape, h):
    """Classify each boundary facet by the empty grid cell it faces."""
    p = nodes[facets]
    c = p.mean(axis=1)
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    labels = np.full(len(facets), int(SurfaceLabel.EPI))
    probe = c + 0.25 * h * n
    has = outside >= 0
    probe[has] = centroids[outside[has]]
    labels[shape.lv_cavity(probe)] = SurfaceLabel.ENDO_LV
    labels[shape.rv_cavity(probe)] = SurfaceLabel.ENDO_RV
    base = (np.abs(c[:, 2] - shape.base_z) < 1e-9 * h) & (n[:, 2] > 0.99)
    labels[base] = SurfaceLabel.BASE
    return labels


def _mark_apex(nodes, facets, labels, radius):
    """Relabel epicardial facets within a geodesic radius of the lowest epicardial node."""
    epi = labels == SurfaceLabel.EPI
    f = facets[epi]
    epi_nodes = np.unique(f)
    lowest = epi_nodes[np.lexsort((epi_nodes, nodes[epi_nodes, 2]))[0]]
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    w = np.linalg.norm(nodes[e[:, 0]] - nodes[e[:, 1]], axis=1)
    g = sp.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(len(nodes),) * 2).tocsr()
    dist = dijkstra(g, directed=False, indices=lowest)
    inside = np.all(dist[f] <= radius, axis=1)
    if not inside.any():
        inside = np.any(f == lowest, axis=1)
    out = labels.copy()
    idx = np.flatnonzero(epi)[inside]
    out[idx] = SurfaceLabel.APEX
    return out


def layer_labels(w, endo_threshold=2.0 / 3.0, epi_threshold=1.0 / 3.0):
    """Transmural layers from the normalized coordinate (1 endo, 0 epi)."""
    w = np.asarray(w)
    out = np.full(w.shape, int(Layer.MID))
    out[w > endo_threshold] = Layer.ENDO
    out[w < epi_threshold] = Layer.EPI
    return out
