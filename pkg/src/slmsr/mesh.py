"""Periodic coarse meshes, per-cell fine submeshes and point location.

Two levels of geometry live here:

* coarse meshes on the unit torus: :class:`CoarseMesh1D` (equispaced
  intervals) and :class:`TriMesh2D` (triangles with integer wrap offsets so
  every cell has a contiguous, unwrapped embedding in the plane);
* fine complexes (:class:`FineComplex1D`, :class:`FineComplex2D`) holding the
  fine submesh of every coarse cell at once, glued through a global fine-node
  numbering. All cells share one local connectivity, which is what lets the
  solver batch local problems across cells with plain numpy.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, cKDTree

__all__ = [
    "CoarseMesh1D",
    "TriMesh2D",
    "FineSubmesh",
    "FineComplex1D",
    "FineComplex2D",
    "MeshGenerationError",
    "build_coarse_mesh_1d",
    "build_fine_submesh_1d",
    "build_periodic_delaunay",
    "refine_triangle_uniform",
    "wrap_point",
    "locate_cell",
    "save_mesh",
    "load_mesh",
]


class MeshGenerationError(RuntimeError):
    """Periodic mesh generation failed after all retries."""


def wrap_point(p):
    """Map arbitrary coordinates onto the torus ``[0, 1)^d``."""
    p = np.asarray(p, dtype=float)
    w = np.mod(p, 1.0)
    # mod can round tiny negatives up to exactly 1.0
    return np.where(w >= 1.0, 0.0, w)


# ---------------------------------------------------------------------------
# 1D
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class CoarseMesh1D:
    n_cells: int

    @property
    def H(self) -> float:
        return 1.0 / self.n_cells

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_cells) / self.n_cells

    @cached_property
    def cells(self) -> np.ndarray:
        i = np.arange(self.n_cells)
        return np.stack([i, (i + 1) % self.n_cells], axis=1)

    @property
    def n_nodes(self) -> int:
        return self.n_cells

    def locate(self, p):
        """Return ``(cell, xi)`` with ``xi`` in ``[0, 1]`` the local coordinate.

        Points on a shared node go to the lower cell id.
        """
        x = wrap_point(p)
        s = x * self.n_cells
        cell = np.minimum(np.floor(s).astype(np.int64), self.n_cells - 1)
        xi = s - cell
        on_node = (xi == 0.0) & (cell > 0)
        cell = np.where(on_node, cell - 1, cell)
        xi = np.where(on_node, 1.0, xi)
        return cell, xi


def build_coarse_mesh_1d(n_cells: int) -> CoarseMesh1D:
    if int(n_cells) != n_cells or n_cells < 2:
        raise ValueError(f"n_cells must be an integer >= 2, got {n_cells!r}")
    return CoarseMesh1D(int(n_cells))


@dataclasses.dataclass(frozen=True)
class FineSubmesh:
    """Fine mesh of one coarse cell.

    ``ref_coords`` are barycentric-free reference coordinates in the parent
    (``xi`` in 1D, ``(xi, eta)`` in 2D), ``unwrapped`` the contiguous planar
    positions and ``coords`` the wrapped torus positions. ``vertex_tag[l]`` is
    the local coarse vertex node ``l`` sits on (or -1) and ``edge_tag[l]`` the
    local coarse edge it lies on (or -1; vertices carry -1 here).
    """

    parent_cell: int
    ref_coords: np.ndarray
    unwrapped: np.ndarray
    coords: np.ndarray
    cells: np.ndarray
    vertex_tag: np.ndarray
    edge_tag: np.ndarray


def build_fine_submesh_1d(mesh: CoarseMesh1D, cell: int, n_fine: int) -> FineSubmesh:
    if int(n_fine) != n_fine or n_fine < 2:
        raise ValueError(f"n_fine must be an integer >= 2, got {n_fine!r}")
    if not 0 <= cell < mesh.n_cells:
        raise IndexError(f"cell {cell} out of range")
    xi = np.arange(n_fine + 1) / n_fine
    left = mesh.nodes[cell]
    unwrapped = left + xi * mesh.H
    # endpoints must coincide with the coarse vertices exactly
    unwrapped[0] = left
    unwrapped[-1] = (cell + 1) / mesh.n_cells
    coords = wrap_point(unwrapped)
    coords[-1] = mesh.nodes[(cell + 1) % mesh.n_cells]
    vertex_tag = np.full(n_fine + 1, -1)
    vertex_tag[0], vertex_tag[-1] = 0, 1
    loc = np.arange(n_fine)
    return FineSubmesh(
        parent_cell=cell,
        ref_coords=xi[:, None],
        unwrapped=unwrapped[:, None],
        coords=coords[:, None],
        cells=np.stack([loc, loc + 1], axis=1),
        vertex_tag=vertex_tag,
        edge_tag=np.full(n_fine + 1, -1),
    )


# ---------------------------------------------------------------------------
# 2D coarse triangulations
# ---------------------------------------------------------------------------

_SHIFTS = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)])


def _signed_area(P):
    """Signed areas of triangles ``P[..., 3, 2]``."""
    a = P[..., 1, :] - P[..., 0, :]
    b = P[..., 2, :] - P[..., 0, :]
    return 0.5 * (a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])


class TriMesh2D:
    """Triangulation of the unit torus.

    ``nodes`` are torus coordinates in ``[0, 1)^2``; ``offsets[c, k]`` is the
    integer lattice shift placing vertex ``k`` of cell ``c`` so the cell is
    contiguous. Local edge ``k`` of a cell runs from vertex ``k`` to vertex
    ``(k + 1) % 3``; ``tri_edges``/``tri_edge_sign`` map it to the global edge
    list (sign -1 when traversed against the stored ``a -> b`` direction).
    Global edges are keyed by ``(a, b, shift)`` so two distinct edges joining
    the same node pair through the seam stay distinct.
    """

    def __init__(self, nodes, triangles, offsets=None):
        self.nodes = np.asarray(nodes, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        if offsets is None:
            offsets = np.zeros(self.triangles.shape + (2,), dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (n, 3)")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.nodes)
        ):
            raise IndexError("triangle references a node out of range")
        self._build_edges()

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.triangles)

    @property
    def cells(self) -> np.ndarray:
        return self.triangles

    @cached_property
    def unwrapped(self) -> np.ndarray:
        """Contiguous vertex coordinates, shape ``(n_cells, 3, 2)``."""
        return self.nodes[self.triangles] + self.offsets

    @cached_property
    def areas(self) -> np.ndarray:
        return _signed_area(self.unwrapped)

    def _build_edges(self):
        T, P = self.triangles, self.nodes[self.triangles] + self.offsets
        nt = len(T)
        a = T
        b = np.roll(T, -1, axis=1)
        Pa = P
        Pb = np.roll(P, -1, axis=1)
        # shift of b's unwrapped copy relative to a's base node frame
        rel = np.rint((Pb - Pa) - (self.nodes[b] - self.nodes[a])).astype(np.int64)
        swap = a > b
        lo = np.where(swap, b, a)
        hi = np.where(swap, a, b)
        shift = np.where(swap[..., None], -rel, rel)
        if np.any(a == b):
            raise MeshGenerationError("triangle with a self-glued edge")
        key = np.stack([lo, hi, shift[..., 0], shift[..., 1]], axis=-1).reshape(-1, 4)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.reshape(nt, 3)
        self.edges = uniq[:, :2].copy()
        self.edge_shift = uniq[:, 2:].copy()
        self.tri_edges = inv
        self.tri_edge_sign = np.where(swap, -1, 1)
        counts = np.bincount(inv.ravel(), minlength=len(uniq))
        self.edge_tri_count = counts
        order = np.argsort(inv.ravel(), kind="stable")
        tri_of = np.repeat(np.arange(nt), 3)[order]
        loc_of = np.tile(np.arange(3), nt)[order]
        self.edge_tris = np.full((len(uniq), 2), -1, dtype=np.int64)
        self.edge_tri_local = np.full((len(uniq), 2), -1, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        for slot in range(2):
            ok = counts > slot
            idx = starts[ok] + slot
            self.edge_tris[ok, slot] = tri_of[idx]
            self.edge_tri_local[ok, slot] = loc_of[idx]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def euler_characteristic(self) -> int:
        return self.n_nodes - self.n_edges + self.n_cells

    def validate(self):
        """Raise :class:`MeshGenerationError` unless this is a closed torus mesh."""
        if np.any(self.edge_tri_count != 2):
            raise MeshGenerationError(
                f"{np.sum(self.edge_tri_count != 2)} edges without exactly 2 triangles"
            )
        if self.euler_characteristic() != 0:
            raise MeshGenerationError(
                f"Euler characteristic {self.euler_characteristic()} != 0"
            )
        if np.any(self.areas <= 0):
            raise MeshGenerationError("non-positive triangle area")
        if abs(self.areas.sum() - 1.0) > 1e-9:
            raise MeshGenerationError(f"areas sum to {self.areas.sum()}, not 1")

    @cached_property
    def periodic_pairs(self):
        """Planar representation used by the mesh file format.

        Returns ``(xy, tris, pairs)``: planar nodes (base copies first, then
        shifted copies), planar triangles and ``(base, copy)`` identifications.
        """
        nv = self.n_nodes
        xy = [self.nodes]
        copies = {}
        tris = self.triangles.copy()
        pairs = []
        for c in range(self.n_cells):
            for k in range(3):
                off = tuple(int(v) for v in self.offsets[c, k])
                if off == (0, 0):
                    continue
                key = (int(self.triangles[c, k]), off)
                if key not in copies:
                    copies[key] = nv + len(copies)
                    pairs.append((key[0], copies[key]))
                    xy.append(self.nodes[key[0]][None, :] + np.array(off, dtype=float))
                tris[c, k] = copies[key]
        return np.concatenate(xy, axis=0), tris, np.array(pairs, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def locator(self) -> "_TriLocator":
        return _TriLocator(self)

    def locate(self, p):
        """Return ``(cell, lam)``; ``lam`` are barycentric coordinates w.r.t. the
        unwrapped cell vertices (after shifting ``p`` by a lattice vector)."""
        return self.locator.locate(p)

    def __eq__(self, other):
        if not isinstance(other, TriMesh2D):
            return NotImplemented
        return (
            np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.offsets, other.offsets)
        )

    __hash__ = None


class _TriLocator:
    """Bucket-grid point location on a periodic triangulation."""

    tol = 1e-12

    def __init__(self, mesh: TriMesh2D):
        if mesh.n_cells == 0:
            raise RuntimeError("cannot locate points on an empty mesh")
        self.mesh = mesh
        P = mesh.unwrapped
        G = max(1, int(np.ceil(np.sqrt(mesh.n_cells))))
        self.G = G
        buckets = [[] for _ in range(G * G)]
        lo_all = P.min(axis=1)
        hi_all = P.max(axis=1)
        for c in range(mesh.n_cells):
            for s in _SHIFTS:
                lo = lo_all[c] - s
                hi = hi_all[c] - s
                if np.any(hi < 0) or np.any(lo >= 1):
                    continue
                i0, j0 = np.clip(np.floor(lo * G).astype(int), 0, G - 1)
                i1, j1 = np.clip(np.floor(hi * G).astype(int), 0, G - 1)
                for i in range(i0, i1 + 1):
                    for j in range(j0, j1 + 1):
                        buckets[i * G + j].append((c, s[0], s[1]))
        width = max(len(b) for b in buckets)
        self.cand = np.full((G * G, width), -1, dtype=np.int64)
        self.cand_shift = np.zeros((G * G, width, 2), dtype=np.int64)
        for k, b in enumerate(buckets):
            b.sort()
            for m, (c, sx, sy) in enumerate(b):
                self.cand[k, m] = c
                self.cand_shift[k, m] = (sx, sy)
        # affine maps for barycentric coordinates
        v0 = P[:, 0]
        J = np.stack([P[:, 1] - v0, P[:, 2] - v0], axis=-1)  # (nc, 2, 2), columns
        self.v0 = v0
        self.Jinv = np.linalg.inv(J)

    def locate(self, p):
        p = wrap_point(np.asarray(p, dtype=float))
        shape = p.shape[:-1]
        q = p.reshape(-1, 2)
        G = self.G
        ij = np.clip(np.floor(q * G).astype(np.int64), 0, G - 1)
        bucket = ij[:, 0] * G + ij[:, 1]
        cand = self.cand[bucket]  # (N, W)
        shift = self.cand_shift[bucket]
        valid = cand >= 0
        cc = np.where(valid, cand, 0)
        r = q[:, None, :] + shift - self.v0[cc]
        lam12 = np.einsum("nwij,nwj->nwi", self.Jinv[cc], r)
        lam = np.concatenate([1.0 - lam12.sum(-1, keepdims=True), lam12], axis=-1)
        inside = valid & np.all(lam >= -self.tol, axis=-1)
        if not np.all(inside.any(axis=1)):
            # fall back to the least-violating candidate (round-off only)
            score = np.where(valid, lam.min(axis=-1), -np.inf)
            first = np.argmax(score, axis=1)
            bad = ~inside.any(axis=1)
            if np.any(score[np.arange(len(q)), first][bad] < -1e-8):
                raise RuntimeError("point location failed")
            inside[bad, first[bad]] = True
        first = np.argmax(inside, axis=1)
        rows = np.arange(len(q))
        cell = cand[rows, first]
        lam = lam[rows, first]
        return cell.reshape(shape), lam.reshape(shape + (3,))


def _torus_lloyd(n_points: int, rng: np.random.Generator, iters: int = 30):
    """Seeded, roughly uniform point set on the torus via periodic Lloyd steps."""
    pts = rng.random((n_points, 2))
    samples = rng.random((max(4000, 200 * n_points), 2))
    for _ in range(iters):
        tree = cKDTree(pts, boxsize=1.0)
        _, owner = tree.query(samples)
        d = samples - pts[owner]
        d -= np.rint(d)
        acc = np.zeros_like(pts)
        np.add.at(acc, owner, d)
        cnt = np.bincount(owner, minlength=n_points)[:, None]
        pts = wrap_point(pts + acc / np.maximum(cnt, 1))
    return pts


def _periodic_delaunay(points):
    nv = len(points)
    ext = np.concatenate([points + s for s in _SHIFTS], axis=0)
    tri = Delaunay(ext).simplices
    cen = ext[tri].mean(axis=1)
    keep = np.all((cen >= 0) & (cen < 1), axis=1)
    tri = tri[keep]
    base = tri % nv
    shift = _SHIFTS[tri // nv]
    P = points[base] + shift
    flip = _signed_area(P) < 0
    base[flip] = base[flip][:, [0, 2, 1]]
    shift[flip] = shift[flip][:, [0, 2, 1]]
    order = np.lexsort((base[:, 2], base[:, 1], base[:, 0]))
    return TriMesh2D(points, base[order], shift[order])


def build_periodic_delaunay(n_target_cells: int, seed: int, max_retries: int = 10) -> TriMesh2D:
    """Deterministic Delaunay triangulation of the torus with about
    ``n_target_cells`` triangles (a torus triangulation has twice as many
    cells as vertices)."""
    if n_target_cells < 8:
        raise ValueError("n_target_cells must be >= 8")
    nv = max(4, int(round(n_target_cells / 2)))
    errors = []
    for attempt in range(max_retries):
        rng = np.random.default_rng([int(seed), attempt])
        pts = _torus_lloyd(nv, rng)
        try:
            mesh = _periodic_delaunay(pts)
            mesh.validate()
        except MeshGenerationError as exc:
            errors.append(f"attempt {attempt}: {exc}")
            continue
        return mesh
    raise MeshGenerationError(
        f"periodic Delaunay failed for n_target={n_target_cells}, seed={seed}: "
        + "; ".join(errors)
    )


def save_mesh(mesh: TriMesh2D, path) -> None:
    xy, tris, pairs = mesh.periodic_pairs
    lines = [f"{len(xy)} {len(tris)} {len(pairs)}"]
    lines += [f"{x!r} {y!r}" for x, y in xy.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in tris.tolist()]
    lines += [f"{a} {b}" for a, b in pairs.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> TriMesh2D:
    rows = Path(path).read_text().split("\n")
    nv, ne, npairs = (int(v) for v in rows[0].split())
    xy = np.array([[float(v) for v in r.split()] for r in rows[1 : 1 + nv]]).reshape(-1, 2)
    tris = np.array(
        [[int(v) for v in r.split()] for r in rows[1 + nv : 1 + nv + ne]], dtype=np.int64
    ).reshape(-1, 3)
    pairs = np.array(
        [[int(v) for v in r.split()] for r in rows[1 + nv + ne : 1 + nv + ne + npairs]],
        dtype=np.int64,
    ).reshape(-1, 2)
    base = np.arange(nv)
    base[pairs[:, 1]] = pairs[:, 0]
    # follow chains of identifications
    while True:
        nxt = base[base]
        if np.array_equal(nxt, base):
            break
        base = nxt
    roots = np.unique(base)
    renum = np.full(nv, -1)
    renum[roots] = np.arange(len(roots))
    nodes = xy[roots]
    wrapped = wrap_point(nodes)
    lift = nodes - wrapped
    offsets = np.rint(xy[tris] - nodes[renum[base[tris]]] + lift[renum[base[tris]]]).astype(np.int64)
    return TriMesh2D(wrapped, renum[base[tris]], offsets)


# ---------------------------------------------------------------------------
# Red refinement
# ---------------------------------------------------------------------------


def _lattice(n: int):
    """Lattice points ``(i, j)`` with ``i + j <= n``, row-major in ``j``."""
    ij = np.array([(i, j) for j in range(n + 1) for i in range(n + 1 - j)], dtype=np.int64)
    return ij


def _lattice_index(n: int):
    idx = -np.ones((n + 1, n + 1), dtype=np.int64)
    for k, (i, j) in enumerate(_lattice(n)):
        idx[i, j] = k
    return idx


def _lattice_elements(n: int):
    idx = _lattice_index(n)
    lower, upper = [], []
    lower_id = -np.ones((n, n), dtype=np.int64)
    upper_id = -np.ones((n, n), dtype=np.int64)
    elems = []
    for j in range(n):
        for i in range(n - j):
            lower_id[i, j] = len(elems)
            elems.append((idx[i, j], idx[i + 1, j], idx[i, j + 1]))
            if i + j < n - 1:
                upper_id[i, j] = len(elems)
                elems.append((idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]))
    return np.array(elems, dtype=np.int64), lower_id, upper_id


def _local_edge_nodes(n: int):
    """Local node indices along local edge k (vertex k -> vertex k+1)."""
    idx = _lattice_index(n)
    k = np.arange(n + 1)
    e0 = idx[k, 0]  # v0 -> v1
    e1 = idx[n - k, k]  # v1 -> v2
    e2 = idx[0, n - k]  # v2 -> v0
    return np.stack([e0, e1, e2])


def _edge_point_table(mesh: TriMesh2D, n: int):
    """Wrapped coordinates of the ``n + 1`` fine nodes on every coarse edge,
    computed once per edge from its stored ``a -> b`` direction."""
    a = mesh.nodes[mesh.edges[:, 0]]
    b = mesh.nodes[mesh.edges[:, 1]] + mesh.edge_shift
    t = np.arange(n + 1) / n
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    pts = wrap_point(pts)
    pts[:, 0] = mesh.nodes[mesh.edges[:, 0]]
    pts[:, -1] = mesh.nodes[mesh.edges[:, 1]]
    return pts


def refine_triangle_uniform(mesh: TriMesh2D, cell: int, levels: int) -> FineSubmesh:
    if levels < 1:
        raise ValueError("levels must be >= 1")
    cx = FineComplex2D(mesh, levels)
    return cx.submesh(cell)


def locate_cell(mesh, p):
    """Locate torus point(s) ``p`` in a coarse mesh.

    Returns ``(cell, local)``: the 1D local coordinate ``xi`` or the 2D
    barycentric coordinates. Points on shared facets go to the lowest cell id.
    """
    if isinstance(mesh, CoarseMesh1D):
        return mesh.locate(np.asarray(p, dtype=float))
    if mesh.n_cells == 0:
        raise RuntimeError("cannot locate points on an empty mesh")
    return mesh.locate(p)


# ---------------------------------------------------------------------------
# Fine complexes: all fine submeshes at once
# ---------------------------------------------------------------------------


class FineComplex1D:
    """Fine submeshes of every cell of a periodic 1D coarse mesh.

    Arrays carry a leading cell axis: ``X[c, l, 0]`` is the unwrapped position
    of local node ``l`` of cell ``c``. Global fine node ``c * n_fine + l``
    owns local node ``l < n_fine``; the right end of a cell is node 0 of the
    next cell.
    """

    dim = 1

    def __init__(self, coarse: CoarseMesh1D, n_fine: int):
        if n_fine < 1:
            raise ValueError("n_fine must be >= 1")
        self.coarse = coarse
        self.n_fine = int(n_fine)
        nc, nf = coarse.n_cells, self.n_fine
        self.n_cells = nc
        self.n_coarse_nodes = nc
        self.cells = coarse.cells
        xi = np.arange(nf + 1) / nf
        self.ref_lambda = np.stack([1.0 - xi, xi], axis=1)
        self.X = ((np.arange(nc)[:, None] + xi[None, :]) / nc)[..., None]
        self.X[:, -1, 0] = (np.arange(nc) + 1) / nc
        loc = np.arange(nf)
        self.elements = np.stack([loc, loc + 1], axis=1)
        self.vertex_local = np.array([0, nf])
        self.boundary_local = np.array([0, nf])
        self.interior_local = np.arange(1, nf)
        gid = np.arange(nc)[:, None] * nf + np.arange(nf + 1)[None, :]
        gid[:, -1] = ((np.arange(nc) + 1) % nc) * nf
        self.global_ids = gid
        self.n_global = nc * nf
        self.global_coords = wrap_point(self.X[:, :-1].reshape(-1, 1))

    @property
    def n_local(self) -> int:
        return self.n_fine + 1

    def submesh(self, cell: int) -> FineSubmesh:
        return build_fine_submesh_1d(self.coarse, cell, self.n_fine)

    def locate(self, p):
        """Return ``(cell, element, bary)`` for torus points ``p[..., 1]``."""
        p = np.asarray(p, dtype=float)[..., 0]
        cell, xi = self.coarse.locate(p)
        s = xi * self.n_fine
        el = np.clip(np.floor(s).astype(np.int64), 0, self.n_fine - 1)
        th = s - el
        return cell, el, np.stack([1.0 - th, th], axis=-1)

    def global_elements(self):
        """Fine elements of the glued global mesh as global node ids."""
        return self.global_ids[:, self.elements].reshape(-1, 2)


class FineComplex2D:
    """Red-refined fine submeshes of every cell of a :class:`TriMesh2D`.

    ``levels = 0`` gives one element per cell (plain P1 on the coarse mesh).
    Boundary fine nodes are numbered globally once per coarse vertex/edge so
    neighbouring cells reference the same storage.
    """

    dim = 2

    def __init__(self, coarse: TriMesh2D, levels: int):
        if levels < 0:
            raise ValueError("levels must be >= 0")
        self.coarse = coarse
        self.levels = int(levels)
        n = 2**self.levels
        self.n = n
        nc = coarse.n_cells
        self.n_cells = nc
        self.n_coarse_nodes = coarse.n_nodes
        self.cells = coarse.triangles
        ij = _lattice(n)
        self.lattice = ij
        xi = ij / n
        self.ref_lambda = np.stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]], axis=1)
        self.elements, self._lower, self._upper = _lattice_elements(n)
        self.edge_local = _local_edge_nodes(n)
        idx = _lattice_index(n)
        self.vertex_local = np.array([idx[0, 0], idx[n, 0], idx[0, n]])
        on_bnd = (ij[:, 0] == 0) | (ij[:, 1] == 0) | (ij.sum(1) == n)
        self.boundary_local = np.flatnonzero(on_bnd)
        self.interior_local = np.flatnonzero(~on_bnd)

        P = coarse.unwrapped  # (nc, 3, 2)
        v0 = P[:, 0]
        self.X = (
            v0[:, None, :]
            + xi[None, :, 0:1] * (P[:, 1] - v0)[:, None, :]
            + xi[None, :, 1:2] * (P[:, 2] - v0)[:, None, :]
        )
        self.X[:, self.vertex_local] = P

        # global numbering: coarse vertices, edge interiors, cell interiors
        nv, ne = coarse.n_nodes, coarse.n_edges
        n_edge_int = n - 1
        n_cell_int = len(self.interior_local)
        gid = np.empty((nc, len(ij)), dtype=np.int64)
        gid[:, self.vertex_local] = coarse.triangles
        edge_gids = np.empty((ne, n + 1), dtype=np.int64)
        edge_gids[:, 0] = coarse.edges[:, 0]
        edge_gids[:, -1] = coarse.edges[:, 1]
        edge_gids[:, 1:-1] = nv + np.arange(ne)[:, None] * n_edge_int + np.arange(n_edge_int)
        self.edge_gids = edge_gids
        for k in range(3):
            e = coarse.tri_edges[:, k]
            fwd = coarse.tri_edge_sign[:, k] > 0
            seq = np.where(fwd[:, None], edge_gids[e], edge_gids[e][:, ::-1])
            gid[:, self.edge_local[k]] = seq
        base = nv + ne * n_edge_int
        gid[:, self.interior_local] = (
            base + np.arange(nc)[:, None] * n_cell_int + np.arange(n_cell_int)[None, :]
        )
        self.global_ids = gid
        self.n_global = base + nc * n_cell_int

        coords = np.empty((self.n_global, 2))
        coords[:nv] = coarse.nodes
        if n > 1:
            coords[nv:base] = _edge_point_table(coarse, n)[:, 1:-1].reshape(-1, 2)
        coords[base:] = wrap_point(self.X[:, self.interior_local]).reshape(-1, 2)
        self.global_coords = coords

    @property
    def n_local(self) -> int:
        return len(self.lattice)

    def submesh(self, cell: int) -> FineSubmesh:
        vt = np.full(self.n_local, -1)
        vt[self.vertex_local] = [0, 1, 2]
        et = np.full(self.n_local, -1)
        for k in range(3):
            et[self.edge_local[k][1:-1]] = k
        return FineSubmesh(
            parent_cell=cell,
            ref_coords=self.lattice / self.n,
            unwrapped=self.X[cell].copy(),
            coords=self.global_coords[self.global_ids[cell]].copy(),
            cells=self.elements.copy(),
            vertex_tag=vt,
            edge_tag=et,
        )

    def locate(self, p):
        """Return ``(cell, element, bary)`` for torus points ``p[..., 2]``."""
        p = np.asarray(p, dtype=float)
        shape = p.shape[:-1]
        cell, lam = self.coarse.locate(p.reshape(-1, 2))
        n = self.n
        a = lam[:, 1] * n
        b = lam[:, 2] * n
        i = np.clip(np.floor(a).astype(np.int64), 0, n - 1)
        j = np.clip(np.floor(b).astype(np.int64), 0, n - 1 - i)
        fa = a - i
        fb = b - j
        up = (fa + fb > 1.0) & (i + j < n - 1)
        el = np.where(up, self._upper[i, np.minimum(j, n - 1)], self._lower[i, j])
        # barycentrics inside the fine element
        bary_lo = np.stack([1.0 - fa - fb, fa, fb], axis=-1)
        bary_up = np.stack([1.0 - fb, fa + fb - 1.0, 1.0 - fa], axis=-1)
        bary = np.where(up[:, None], bary_up, bary_lo)
        bary = np.clip(bary, 0.0, None)
        bary /= bary.sum(axis=1, keepdims=True)
        return cell.reshape(shape), el.reshape(shape), bary.reshape(shape + (3,))

    def global_elements(self):
        return self.global_ids[:, self.elements].reshape(-1, 3)

    def as_trimesh(self) -> TriMesh2D:
        """The glued fine mesh as a torus triangulation of its own."""
        tris = self.global_elements()
        Xe = self.X[:, self.elements].reshape(-1, 3, 2)
        offsets = np.rint(Xe - self.global_coords[tris]).astype(np.int64)
        return TriMesh2D(self.global_coords, tris, offsets)
