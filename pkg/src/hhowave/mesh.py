"""Polygonal meshes for bilayer fluid/solid domains.

Cells are star-shaped polygons with straight faces, tagged fluid or solid;
the fluid-solid interface is the set of faces whose two neighbors carry
different tags. Hanging nodes are supported by treating the coarse neighbor
as a polygon with extra (collinear) vertices: construction detects unpaired
edges that pass through other mesh vertices and splits them, so nonconforming
inputs (merged submeshes, locally refined MSH files) need no special casing.

Face conventions: the stored vertex pair follows the owner cell's
counterclockwise traversal, so the stored unit normal (tangent rotated by
-90 degrees) points out of the owner. Owners are chosen as the lower cell id,
except on interface faces where the solid cell is always the owner; the
stored normal there is the interface normal pointing from solid into fluid.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .basis import polygon_area, polygon_centroid, polygon_diameter

FLUID = 0
SOLID = 1

# face classes
F_INT_FLUID = 0
F_INT_SOLID = 1
F_INTERFACE = 2
F_BND_FLUID = 3
F_BND_SOLID = 4

FACE_CLASS_NAMES = {
    F_INT_FLUID: "fluid_interior",
    F_INT_SOLID: "solid_interior",
    F_INTERFACE: "interface",
    F_BND_FLUID: "fluid_boundary",
    F_BND_SOLID: "solid_boundary",
}

COINCIDENCE_TOL = 1e-12  # relative to the global length scale


class MeshError(Exception):
    """Invalid mesh topology, geometry or input file."""


@dataclass(frozen=True)
class MeshGenSpec:
    """Built-in mesh generator request.

    family: 'cartesian', 'simplicial' or 'polygonal-hexagonal'.
    level: refinement level l with target mesh size h = 2**-l.
    fluid_rect / solid_rect: (x0, y0, x1, y1) per subdomain; one may be None
    for a single-subdomain mesh.
    n_fluid / n_solid: optional explicit cartesian cell counts (nx, ny)
    overriding the 2**-l sizing (cartesian and simplicial families only).
    """

    family: str
    level: int = 0
    fluid_rect: tuple | None = None
    solid_rect: tuple | None = None
    n_fluid: tuple | None = None
    n_solid: tuple | None = None


class PolyMesh:
    """Immutable 2D polygonal mesh with fluid/solid cell tags."""

    def __init__(self, vertices, cell_vertices, subdomain, region=None,
                 region_names=None, resolve_hanging=True, check=True):
        vertices = np.asarray(vertices, dtype=float)
        cells = [np.asarray(c, dtype=np.int64) for c in cell_vertices]
        subdomain = np.asarray(subdomain, dtype=np.int8)
        if len(cells) != len(subdomain):
            raise MeshError("one subdomain tag per cell required")
        if region is None:
            region = subdomain.astype(np.int64)
            region_names = {FLUID: "fluid", SOLID: "solid"}
        region = np.asarray(region, dtype=np.int64)
        self.region_names = dict(region_names or {})

        vertices, cells = _dedup_vertices(vertices, cells)
        cells = [_orient_ccw(vertices, c) for c in cells]
        if resolve_hanging:
            cells = _resolve_hanging_nodes(vertices, cells)

        self.vertices = vertices
        self.cell_vertices = cells
        self.subdomain = subdomain
        self.region = region
        self.n_cells = len(cells)
        self.n_vertices = len(vertices)

        bbox = vertices.max(axis=0) - vertices.min(axis=0)
        self.length_scale = float(np.hypot(*bbox))

        self._build_faces()
        self._build_geometry()
        if check:
            self.validate()

    # -- construction -----------------------------------------------------

    def _build_faces(self):
        edge_map: dict[tuple[int, int], int] = {}
        face_cells: list[list[int]] = []
        face_pairs: list[tuple[int, int]] = []
        cell_faces = []
        cell_dirs = []
        for ci, loop in enumerate(self.cell_vertices):
            ids = []
            dirs = []
            n = len(loop)
            for i in range(n):
                a, b = int(loop[i]), int(loop[(i + 1) % n])
                key = (a, b) if a < b else (b, a)
                fi = edge_map.get(key)
                if fi is None:
                    fi = len(face_pairs)
                    edge_map[key] = fi
                    face_pairs.append((a, b))
                    face_cells.append([ci])
                else:
                    face_cells[fi].append(ci)
                    if len(face_cells[fi]) > 2:
                        raise MeshError(f"face {key} shared by more than two cells")
                ids.append(fi)
                dirs.append((a, b))
            cell_faces.append(np.array(ids, dtype=np.int64))
            cell_dirs.append(dirs)

        n_faces = len(face_pairs)
        owner = np.full(n_faces, -1, dtype=np.int64)
        neighbor = np.full(n_faces, -1, dtype=np.int64)
        stored = np.zeros((n_faces, 2), dtype=np.int64)
        fclass = np.zeros(n_faces, dtype=np.int8)

        for fi, adj in enumerate(face_cells):
            if len(adj) == 1:
                own, nb = adj[0], -1
                fclass[fi] = F_BND_FLUID if self.subdomain[own] == FLUID else F_BND_SOLID
            else:
                c0, c1 = adj
                s0, s1 = self.subdomain[c0], self.subdomain[c1]
                if s0 != s1:
                    own, nb = (c0, c1) if s0 == SOLID else (c1, c0)
                    fclass[fi] = F_INTERFACE
                else:
                    own, nb = (c0, c1) if c0 < c1 else (c1, c0)
                    fclass[fi] = F_INT_FLUID if s0 == FLUID else F_INT_SOLID
            owner[fi] = own
            neighbor[fi] = nb

        # store the vertex pair in the owner's traversal direction
        orient = []
        for ci, dirs in enumerate(cell_dirs):
            signs = np.empty(len(dirs), dtype=np.int8)
            for j, (a, b) in enumerate(dirs):
                fi = cell_faces[ci][j]
                if owner[fi] == ci:
                    stored[fi] = (a, b)
                    signs[j] = 1
                else:
                    signs[j] = -1
            orient.append(signs)

        self.faces = stored
        self.face_owner = owner
        self.face_neighbor = neighbor
        self.face_class = fclass
        self.cell_faces = cell_faces
        self.cell_face_orient = orient
        self.n_faces = n_faces

    def _build_geometry(self):
        self.cell_area = np.empty(self.n_cells)
        self.cell_centroid = np.empty((self.n_cells, 2))
        self.cell_diameter = np.empty(self.n_cells)
        for ci, loop in enumerate(self.cell_vertices):
            pts = self.vertices[loop]
            self.cell_area[ci] = polygon_area(pts)
            self.cell_centroid[ci] = polygon_centroid(pts)
            self.cell_diameter[ci] = polygon_diameter(pts)

        d = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        self.face_measure = np.hypot(d[:, 0], d[:, 1])
        with np.errstate(invalid="ignore", divide="ignore"):
            t = d / self.face_measure[:, None]
        self.face_normal = np.column_stack([t[:, 1], -t[:, 0]])
        self.face_midpoint = 0.5 * (self.vertices[self.faces[:, 0]]
                                    + self.vertices[self.faces[:, 1]])

    # -- queries -----------------------------------------------------------

    def face_vertices(self, fi):
        return self.vertices[self.faces[fi, 0]], self.vertices[self.faces[fi, 1]]

    def outward_normal(self, ci, local_j):
        """Outward unit normal of cell `ci` on its local face `local_j`."""
        fi = self.cell_faces[ci][local_j]
        return self.face_normal[fi] * self.cell_face_orient[ci][local_j]

    def faces_of_class(self, fclass):
        return np.nonzero(self.face_class == fclass)[0]

    @property
    def interface_faces(self):
        return self.faces_of_class(F_INTERFACE)

    def cells_of_subdomain(self, sub):
        return np.nonzero(self.subdomain == sub)[0]

    def locate_cell(self, point, tol_rel=1e-12):
        """Id of the lowest-numbered cell containing `point` (boundary inclusive)."""
        p = np.asarray(point, dtype=float)
        tol = tol_rel * self.length_scale
        for ci in range(self.n_cells):
            if _point_in_polygon(p, self.vertices[self.cell_vertices[ci]], tol):
                return ci
        raise MeshError(f"point {point} lies outside the mesh")

    def validate(self):
        tol = COINCIDENCE_TOL * self.length_scale
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        if np.any(self.face_measure <= tol):
            raise MeshError("degenerate face (zero length)")
        for ci, loop in enumerate(self.cell_vertices):
            if len(loop) < 3:
                raise MeshError(f"cell {ci} has fewer than 3 faces")
            if self.cell_area[ci] <= 0:
                raise MeshError(f"cell {ci} has non-positive area")
            pts = self.vertices[loop]
            c = self.cell_centroid[ci]
            n = len(pts)
            for i in range(n):
                p1, p2 = pts[i], pts[(i + 1) % n]
                tri2 = (p1[0] - c[0]) * (p2[1] - c[1]) - (p1[1] - c[1]) * (p2[0] - c[0])
                if tri2 <= 1e-13 * self.cell_area[ci]:
                    raise MeshError(f"cell {ci} is not star-shaped w.r.t. its barycenter")
        # interface normals must point from solid into fluid
        for fi in self.interface_faces:
            own, nb = self.face_owner[fi], self.face_neighbor[fi]
            if self.subdomain[own] != SOLID or self.subdomain[nb] != FLUID:
                raise MeshError("interface face owner/neighbor tags inconsistent")
            d = self.cell_centroid[nb] - self.cell_centroid[own]
            if float(d @ self.face_normal[fi]) <= 0:
                raise MeshError("interface normal does not point from solid to fluid")


def classify_faces(mesh: PolyMesh) -> dict[str, np.ndarray]:
    """Partition of the face set into the five named classes."""
    out = {name: mesh.faces_of_class(code) for code, name in FACE_CLASS_NAMES.items()}
    total = sum(len(v) for v in out.values())
    if total != mesh.n_faces:
        raise MeshError("face classification does not partition the face set")
    return out


# ---------------------------------------------------------------------------
# helpers

def _orient_ccw(vertices, loop):
    if polygon_area(vertices[loop]) < 0:
        return loop[::-1].copy()
    return loop


def _dedup_vertices(vertices, cells, tol=None):
    """Merge geometrically coincident vertices (within tol) and drop unused ones."""
    if len(vertices) == 0:
        return vertices, cells
    bbox = vertices.max(axis=0) - vertices.min(axis=0)
    scale = float(np.hypot(*bbox)) or 1.0
    if tol is None:
        tol = COINCIDENCE_TOL * scale
    buckets: dict[tuple[int, int], int] = {}
    remap = np.full(len(vertices), -1, dtype=np.int64)
    kept: list[np.ndarray] = []
    inv = 1.0 / tol if tol > 0 else 0.0
    for i, p in enumerate(vertices):
        kx, ky = int(math.floor(p[0] * inv)), int(math.floor(p[1] * inv))
        hit = -1
        for dx in (0, -1, 1):
            for dy in (0, -1, 1):
                j = buckets.get((kx + dx, ky + dy), -1)
                if j >= 0 and abs(kept[j][0] - p[0]) <= tol and abs(kept[j][1] - p[1]) <= tol:
                    hit = j
                    break
            if hit >= 0:
                break
        if hit < 0:
            hit = len(kept)
            kept.append(p)
            buckets[(kx, ky)] = hit
        remap[i] = hit
    new_cells = []
    for loop in cells:
        mapped = remap[loop]
        # collapse consecutive duplicates created by the merge
        keep = np.ones(len(mapped), dtype=bool)
        for i in range(len(mapped)):
            if mapped[i] == mapped[(i + 1) % len(mapped)]:
                keep[(i + 1) % len(mapped)] = False
        cleaned = mapped[keep]
        if len(cleaned) < 3:
            raise MeshError("cell degenerated during vertex deduplication "
                            "(mesh too fine for the coincidence tolerance)")
        new_cells.append(cleaned)
    merged = np.array(kept)
    used = np.zeros(len(merged), dtype=bool)
    for loop in new_cells:
        used[loop] = True
    if not used.all():
        compact = np.cumsum(used) - 1
        merged = merged[used]
        new_cells = [compact[loop] for loop in new_cells]
    return merged, new_cells


def _resolve_hanging_nodes(vertices, cells):
    """Split unpaired cell edges that pass through other mesh vertices.

    A vertex strictly interior to another cell's edge (a hanging node) is
    inserted into that cell's loop, turning the cell into a polygon with an
    extra face so that edge pairing becomes exact.
    """
    if len(vertices) == 0:
        return cells
    scale = float(np.hypot(*(vertices.max(axis=0) - vertices.min(axis=0)))) or 1.0
    tol = 1e-9 * scale
    counts: dict[tuple[int, int], int] = {}
    for loop in cells:
        n = len(loop)
        for i in range(n):
            a, b = int(loop[i]), int(loop[(i + 1) % n])
            key = (a, b) if a < b else (b, a)
            counts[key] = counts.get(key, 0) + 1
    unpaired = [k for k, c in counts.items() if c == 1]
    if not unpaired:
        return cells
    tree = cKDTree(vertices)
    inserts: dict[tuple[int, int], list[int]] = {}
    for a, b in unpaired:
        pa, pb = vertices[a], vertices[b]
        mid = 0.5 * (pa + pb)
        length = float(np.hypot(*(pb - pa)))
        cand = tree.query_ball_point(mid, 0.5 * length + tol)
        t_dir = (pb - pa) / length
        found = []
        for j in cand:
            if j == a or j == b:
                continue
            rel = vertices[j] - pa
            s = float(rel @ t_dir)
            off = abs(rel[0] * t_dir[1] - rel[1] * t_dir[0])
            if off <= tol and tol < s < length - tol:
                found.append((s, j))
        if found:
            found.sort()
            inserts[(a, b)] = [j for _, j in found]
    if not inserts:
        return cells
    new_cells = []
    for loop in cells:
        n = len(loop)
        out = []
        for i in range(n):
            a, b = int(loop[i]), int(loop[(i + 1) % n])
            out.append(a)
            key = (a, b) if a < b else (b, a)
            extra = inserts.get(key)
            if extra:
                out.extend(extra if a < b else extra[::-1])
        new_cells.append(np.array(out, dtype=np.int64))
    return new_cells


def _point_in_polygon(p, poly, tol):
    """Boundary-inclusive point-in-polygon test (CCW polygon)."""
    n = len(poly)
    inside = True
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cross < -tol * max(1.0, float(np.hypot(*(b - a)))):
            inside = False
            break
    return inside


# ---------------------------------------------------------------------------
# generators

def generate(spec: MeshGenSpec) -> PolyMesh:
    """Generate a (bilayer) mesh of the requested family at level `spec.level`."""
    if spec.level < 0:
        raise MeshError("refinement level must be >= 0")
    if spec.fluid_rect is None and spec.solid_rect is None:
        raise MeshError("at least one subdomain rectangle required")
    h = 2.0 ** (-spec.level)
    if spec.family == "cartesian":
        return _generate_grid(spec, h, split=False)
    if spec.family == "simplicial":
        return _generate_grid(spec, h, split=True)
    if spec.family == "polygonal-hexagonal":
        return _generate_hex(spec, h)
    raise MeshError(f"unsupported mesh family {spec.family!r}")


def _rect_counts(rect, h, counts):
    x0, y0, x1, y1 = rect
    if counts is not None:
        return int(counts[0]), int(counts[1])
    nx, ny = (x1 - x0) / h, (y1 - y0) / h
    if abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9:
        raise MeshError(f"rectangle {rect} is not commensurate with h = {h}")
    return max(1, round(nx)), max(1, round(ny))


def _grid_cells(rect, nx, ny):
    x0, y0, x1, y1 = rect
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([xx.ravel(), yy.ravel()])
    vid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    cells = [[vid[i, j], vid[i + 1, j], vid[i + 1, j + 1], vid[i, j + 1]]
             for i in range(nx) for j in range(ny)]
    return verts, cells


def _stagger_phase(i, n, full=0.5):
    """Stagger offset ramping from 0 at the walls to `full` in the interior.

    Keeps the cells next to the vertical boundaries at full width; a plain
    half-offset stagger would pinch them to half width, and those small stiff
    cells would dominate explicit stability limits.
    """
    edge = min(i, n - i)
    if edge <= 0:
        return 0.0
    if edge == 1:
        return 0.5 * full
    return full


def _staggered_rows(rect, h, counts):
    """Near-equilateral staggered lattice rows for one rectangle.

    Rows are phased by their global index relative to y = 0 so that two
    rectangles sharing a horizontal or vertical boundary produce matching
    lattices there.
    """
    x0, y0, x1, y1 = rect
    nx, _ = _rect_counts(rect, h, counts)
    a = (x1 - x0) / nx
    row_h_ideal = math.sqrt(3.0) * a / 2.0
    ny = max(1, round((y1 - y0) / row_h_ideal))
    b = (y1 - y0) / ny
    base_row = round(y0 / b)
    points = []
    for r in range(ny + 1):
        y = y0 + r * b
        if (base_row + r) % 2 == 0:
            xs = [x0 + i * a for i in range(nx + 1)]
        else:
            xs = [x0 + (i + _stagger_phase(i, nx)) * a for i in range(nx + 1)]
        points.extend((x, y) for x in xs)
    return np.array(points)


def _triangulate_rect(rect, h, counts):
    from scipy.spatial import Delaunay

    points = _staggered_rows(rect, h, counts)
    tri = Delaunay(points)
    cells = [simplex for simplex in tri.simplices]
    # Delaunay of a point set in a rectangle covers it exactly (convex domain)
    return points, cells


def _generate_grid(spec, h, split):
    all_verts = []
    all_cells = []
    subdomain = []
    offset = 0
    for rect, counts, sub in ((spec.fluid_rect, spec.n_fluid, FLUID),
                              (spec.solid_rect, spec.n_solid, SOLID)):
        if rect is None:
            continue
        if split:
            verts, cells = _triangulate_rect(rect, h, counts)
        else:
            nx, ny = _rect_counts(rect, h, counts)
            verts, cells = _grid_cells(rect, nx, ny)
        all_verts.append(verts)
        all_cells.extend([np.asarray(c) + offset for c in cells])
        subdomain.extend([sub] * len(cells))
        offset += len(verts)
    return PolyMesh(np.vstack(all_verts), all_cells, subdomain)


# Hexagon lattice pitch relative to the level size h, chosen so that one
# hexagonal cell has the same area as one cartesian cell at the same level.
HEX_PITCH_FACTOR = math.sqrt(2.0 / math.sqrt(3.0))


def _hex_seeds(rect, d):
    """Staggered seed lattice strictly inside the rectangle.

    Odd rows ramp their stagger to (nearly) align with the even rows at the
    vertical walls, so the wall-adjacent Voronoi cells keep full width.
    """
    x0, y0, x1, y1 = rect
    width, height = x1 - x0, y1 - y0
    row_h_ideal = math.sqrt(3.0) * d / 2.0
    ny = max(1, round(height / row_h_ideal))
    rh = height / ny
    nx = max(1, round(width / d))
    dx = width / nx
    pts = []
    for r in range(ny):
        y = y0 + (r + 0.5) * rh
        if r % 2 == 0:
            xs = [x0 + (i + 0.5) * dx for i in range(nx)]
        else:
            xs = [x0 + (i + 0.5 + _stagger_phase(i, nx - 1, full=-0.4)) * dx
                  for i in range(nx)]
        pts.extend((x, y) for x in xs)
    return np.array(pts), max(dx, rh)


def _generate_hex_rect(rect, d):
    """Voronoi tessellation of a staggered lattice, mirrored at the boundary.

    Mirroring the near-boundary seeds across the rectangle edges makes the
    Voronoi interfaces coincide with the edges, so the interior cells tile
    the rectangle exactly: hexagons inside, healthy clipped polygons at the
    boundary, no sliver cells.
    """
    from scipy.spatial import Voronoi

    x0, y0, x1, y1 = rect
    seeds, pitch = _hex_seeds(rect, d)
    margin = 3.0 * pitch
    mirrored = [seeds]
    near_l = seeds[seeds[:, 0] - x0 < margin]
    near_r = seeds[x1 - seeds[:, 0] < margin]
    near_b = seeds[seeds[:, 1] - y0 < margin]
    near_t = seeds[y1 - seeds[:, 1] < margin]
    mirrored.append(np.column_stack([2 * x0 - near_l[:, 0], near_l[:, 1]]))
    mirrored.append(np.column_stack([2 * x1 - near_r[:, 0], near_r[:, 1]]))
    mirrored.append(np.column_stack([near_b[:, 0], 2 * y0 - near_b[:, 1]]))
    mirrored.append(np.column_stack([near_t[:, 0], 2 * y1 - near_t[:, 1]]))
    for xs, ys in (((x0, near_l), (y0, near_b)), ((x0, near_l), (y1, near_t)),
                   ((x1, near_r), (y0, near_b)), ((x1, near_r), (y1, near_t))):
        corner = seeds[(np.abs(seeds[:, 0] - xs[0]) < margin)
                       & (np.abs(seeds[:, 1] - ys[0]) < margin)]
        mirrored.append(np.column_stack([2 * xs[0] - corner[:, 0],
                                         2 * ys[0] - corner[:, 1]]))
    vor = Voronoi(np.vstack(mirrored))
    polys = []
    snap = 1e-9 * pitch
    for i in range(len(seeds)):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or len(region) < 3:
            raise MeshError("hexagonal tiling failed (unbounded boundary cell)")
        poly = vor.vertices[region]
        poly[:, 0] = np.clip(poly[:, 0], x0, x1)
        poly[:, 1] = np.clip(poly[:, 1], y0, y1)
        poly[np.abs(poly[:, 0] - x0) < snap, 0] = x0
        poly[np.abs(poly[:, 0] - x1) < snap, 0] = x1
        poly[np.abs(poly[:, 1] - y0) < snap, 1] = y0
        poly[np.abs(poly[:, 1] - y1) < snap, 1] = y1
        ang = np.arctan2(poly[:, 1] - seeds[i, 1], poly[:, 0] - seeds[i, 0])
        poly = poly[np.argsort(ang)]
        # drop duplicates created by snapping
        keep = np.ones(len(poly), dtype=bool)
        for j in range(len(poly)):
            nxt = (j + 1) % len(poly)
            if keep[j] and np.hypot(*(poly[j] - poly[nxt])) < snap:
                keep[nxt] = False
        poly = poly[keep]
        if len(poly) >= 3:
            polys.append(poly)
    return polys


def _generate_hex(spec, h):
    rects = [(r, sub) for r, sub in ((spec.fluid_rect, FLUID), (spec.solid_rect, SOLID))
             if r is not None]
    d = HEX_PITCH_FACTOR * h
    all_verts = []
    all_cells = []
    subdomain = []
    offset = 0
    for rect, sub in rects:
        for poly in _generate_hex_rect(rect, d):
            all_verts.append(poly)
            all_cells.append(np.arange(len(poly)) + offset)
            subdomain.append(sub)
            offset += len(poly)
    if not all_cells:
        raise MeshError("hexagonal tiling produced no cells (level too coarse)")
    return PolyMesh(np.vstack(all_verts), all_cells, subdomain)


# ---------------------------------------------------------------------------
# MSH v2.2 reader

_MSH_2D_TYPES = {2: 3, 3: 4}          # element type -> vertex count
_MSH_SKIP_TYPES = {1, 15}             # lines and points carry no cells
_MSH_3D_TYPES = {4, 5, 6, 7, 11, 17}  # tet, hex, prism, pyramid, ...


def read_msh(path, region_map=None) -> PolyMesh:
    """Read an ASCII MSH v2.2 file with triangles and/or quadrangles.

    Physical tags identify the subdomains. By default a physical name
    containing 'fluid' (or 'acoustic', 'atmosphere', 'water', 'air') maps to
    the fluid subdomain and one containing 'solid' (or 'elastic', 'rock',
    'bedrock', 'sediment') to the solid one; `region_map` can override this
    with an explicit {name_or_tag: 'fluid'|'solid'} mapping.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    sections = dict(re.findall(r"\$(\w+)\n(.*?)\$End\1", text, flags=re.S))
    if "MeshFormat" not in sections:
        raise MeshError("not an MSH file (missing $MeshFormat)")
    version = sections["MeshFormat"].split()
    if not version or not version[0].startswith("2.2"):
        raise MeshError(f"unsupported MSH version {version[:1]}; expected 2.2")

    names = {}
    if "PhysicalNames" in sections:
        lines = sections["PhysicalNames"].strip().splitlines()
        for line in lines[1:]:
            parts = line.split(maxsplit=2)
            if len(parts) == 3:
                names[int(parts[1])] = parts[2].strip().strip('"')

    if "Nodes" not in sections or "Elements" not in sections:
        raise MeshError("missing $Nodes or $Elements section")
    node_lines = sections["Nodes"].strip().splitlines()
    n_nodes = int(node_lines[0])
    coords = np.empty((n_nodes, 2))
    node_id = {}
    for i, line in enumerate(node_lines[1:n_nodes + 1]):
        parts = line.split()
        node_id[int(parts[0])] = i
        x, y, z = float(parts[1]), float(parts[2]), float(parts[3])
        if abs(z) > 1e-12 * (1.0 + abs(x) + abs(y)):
            raise MeshError("unsupported element dimension: nodes with z != 0")
        coords[i] = (x, y)

    elem_lines = sections["Elements"].strip().splitlines()
    n_elems = int(elem_lines[0])
    cells = []
    cell_region = []
    for line in elem_lines[1:n_elems + 1]:
        parts = [int(p) for p in line.split()]
        etype, ntags = parts[1], parts[2]
        tags = parts[3:3 + ntags]
        conn = parts[3 + ntags:]
        if etype in _MSH_SKIP_TYPES:
            continue
        if etype in _MSH_3D_TYPES:
            raise MeshError(f"unsupported element dimension (element type {etype})")
        if etype not in _MSH_2D_TYPES:
            raise MeshError(f"unsupported element type {etype}")
        if len(conn) != _MSH_2D_TYPES[etype]:
            raise MeshError("malformed element connectivity")
        cells.append(np.array([node_id[v] for v in conn], dtype=np.int64))
        cell_region.append(tags[0] if tags else 0)

    if not cells:
        raise MeshError("no 2D elements found")
    region = np.asarray(cell_region, dtype=np.int64)
    subdomain = _regions_to_subdomains(region, names, region_map)
    region_names = {tag: names.get(tag, str(tag)) for tag in np.unique(region)}
    return PolyMesh(coords, cells, subdomain, region=region, region_names=region_names)


_FLUID_WORDS = ("fluid", "acoustic", "atmosphere", "water", "air")
_SOLID_WORDS = ("solid", "elastic", "rock", "bedrock", "sediment", "granite")


def _regions_to_subdomains(region, names, region_map):
    lookup = {}
    if region_map:
        for key, val in region_map.items():
            sub = {"fluid": FLUID, "solid": SOLID}.get(str(val).lower())
            if sub is None:
                raise MeshError(f"region map value {val!r} is not 'fluid' or 'solid'")
            lookup[str(key)] = sub
    out = np.empty(len(region), dtype=np.int8)
    for i, tag in enumerate(region):
        name = names.get(int(tag), "")
        sub = lookup.get(name, lookup.get(str(int(tag))))
        if sub is None:
            low = name.lower()
            if any(w in low for w in _FLUID_WORDS):
                sub = FLUID
            elif any(w in low for w in _SOLID_WORDS):
                sub = SOLID
            else:
                raise MeshError(f"unknown physical tag {int(tag)} ({name!r}); "
                                "provide a region map")
        out[i] = sub
    return out


# ---------------------------------------------------------------------------
# nonconforming merge

def merge_nonconforming(fluid: PolyMesh, solid: PolyMesh) -> PolyMesh:
    """Union of a fluid and a solid mesh whose interface traces may differ.

    Both meshes must cover disjoint domains sharing the interface polyline
    geometrically (within the coincidence tolerance). Faces on the interface
    are split at the union of both traces' vertices, so cells adjacent to a
    split face gain faces and are treated as general polygons.
    """
    if np.any(fluid.subdomain != FLUID):
        raise MeshError("first argument must be an all-fluid mesh")
    if np.any(solid.subdomain != SOLID):
        raise MeshError("second argument must be an all-solid mesh")
    _check_trace_consistency(fluid, solid)

    verts = np.vstack([fluid.vertices, solid.vertices])
    cells = [loop.copy() for loop in fluid.cell_vertices]
    cells += [loop + fluid.n_vertices for loop in solid.cell_vertices]
    subdomain = np.concatenate([fluid.subdomain, solid.subdomain])

    # keep region tags from both sides, remapping collisions
    regions_f = fluid.region
    shift = (regions_f.max() + 1) if len(regions_f) else 0
    regions_s = solid.region + shift
    region = np.concatenate([regions_f, regions_s])
    region_names = dict(fluid.region_names)
    for tag, name in solid.region_names.items():
        region_names[tag + shift] = name
    return PolyMesh(verts, cells, subdomain, region=region, region_names=region_names)


def _boundary_segments(mesh):
    segs = []
    for fi in range(mesh.n_faces):
        if mesh.face_neighbor[fi] == -1:
            segs.append((mesh.vertices[mesh.faces[fi, 0]], mesh.vertices[mesh.faces[fi, 1]]))
    return segs

def _check_trace_consistency(fluid, solid):
    """The parts of both boundaries that face each other must span equal length."""
    scale = max(fluid.length_scale, solid.length_scale)
    tol = 1e-9 * scale
    f_segs = _boundary_segments(fluid)
    s_segs = _boundary_segments(solid)

    def overlap_length(segs_a, segs_b):
        total = 0.0
        for pa, pb in segs_a:
            t = pb - pa
            length = float(np.hypot(*t))
            t = t / length
            n = np.array([t[1], -t[0]])
            lo, hi = [], []
            for qa, qb in segs_b:
                if abs(float((qa - pa) @ n)) > tol or abs(float((qb - pa) @ n)) > tol:
                    continue
                s0 = float((qa - pa) @ t)
                s1 = float((qb - pa) @ t)
                a, b = min(s0, s1), max(s0, s1)
                a, b = max(a, 0.0), min(b, length)
                if b - a > tol:
                    lo.append(a)
                    hi.append(b)
            if lo:
                order = np.argsort(lo)
                cur_a, cur_b = None, None
                for idx in order:
                    a, b = lo[idx], hi[idx]
                    if cur_a is None:
                        cur_a, cur_b = a, b
                    elif a <= cur_b + tol:
                        cur_b = max(cur_b, b)
                    else:
                        total += cur_b - cur_a
                        cur_a, cur_b = a, b
                if cur_a is not None:
                    total += cur_b - cur_a
        return total

    len_f = overlap_length(f_segs, s_segs)
    len_s = overlap_length(s_segs, f_segs)
    if len_f < tol or len_s < tol:
        raise MeshError("meshes do not share an interface polyline")
    if abs(len_f - len_s) > 1e-6 * max(len_f, len_s):
        raise MeshError("interface traces are geometrically inconsistent")


# ---------------------------------------------------------------------------
# fixture dump format (line-oriented text)

def dump_text(mesh: PolyMesh, path):
    """Write the mesh in the line-oriented fixture format."""
    tags = sorted({int(t) for t in mesh.region})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("polymesh 1\n")
        fh.write(f"regions {len(tags)}\n")
        for tag in tags:
            sub = mesh.subdomain[mesh.region == tag][0]
            name = mesh.region_names.get(tag, str(tag))
            fh.write(f"{tag} {name} {'fluid' if sub == FLUID else 'solid'}\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"cells {mesh.n_cells}\n")
        for loop, tag in zip(mesh.cell_vertices, mesh.region):
            fh.write(f"{int(tag)} " + " ".join(str(int(v)) for v in loop) + "\n")


def load_text(path) -> PolyMesh:
    """Read a mesh written by `dump_text`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if header[:1] != ["polymesh"]:
            raise MeshError("not a polymesh fixture file")
        n_regions = int(fh.readline().split()[1])
        region_names = {}
        region_sub = {}
        for _ in range(n_regions):
            parts = fh.readline().split()
            tag = int(parts[0])
            region_names[tag] = parts[1]
            region_sub[tag] = FLUID if parts[2] == "fluid" else SOLID
        n_verts = int(fh.readline().split()[1])
        verts = np.array([[float(x) for x in fh.readline().split()] for _ in range(n_verts)])
        n_cells = int(fh.readline().split()[1])
        cells = []
        region = []
        for _ in range(n_cells):
            parts = fh.readline().split()
            region.append(int(parts[0]))
            cells.append(np.array([int(v) for v in parts[1:]], dtype=np.int64))
    subdomain = np.array([region_sub[t] for t in region], dtype=np.int8)
    return PolyMesh(verts, cells, subdomain, region=np.array(region),
                    region_names=region_names)
