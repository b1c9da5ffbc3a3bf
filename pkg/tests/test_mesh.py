"""Mesh generation, file IO, nonconforming merge and classification tests."""

import numpy as np
import pytest

from hhowave import mesh as msh
from hhowave.mesh import (FLUID, SOLID, MeshError, MeshGenSpec, PolyMesh,
                          classify_faces, dump_text, generate, load_text,
                          merge_nonconforming, read_msh)

BILAYER = dict(fluid_rect=(0.0, 0.0, 1.0, 1.0), solid_rect=(-1.0, 0.0, 0.0, 1.0))


def quad_strip(x0, x1, y0, y1, dx, offset=0.0, sub=FLUID):
    """Strip of axis-aligned rectangles with interior x-breaks offset by `offset`."""
    xs = [x0]
    x = x0 + offset if offset > 0 else x0 + dx
    while x < x1 - 1e-12:
        xs.append(x)
        x += dx
    xs.append(x1)
    verts = []
    cells = []
    for i in range(len(xs) - 1):
        base = len(verts)
        verts += [(xs[i], y0), (xs[i + 1], y0), (xs[i + 1], y1), (xs[i], y1)]
        cells.append([base, base + 1, base + 2, base + 3])
    return PolyMesh(np.array(verts, dtype=float), cells, [sub] * len(cells))


# ---------------------------------------------------------------------------
# generators

def test_cartesian_level0():
    m = generate(MeshGenSpec("cartesian", 0, **BILAYER))
    assert m.n_cells == 2
    assert len(m.interface_faces) == 1
    classes = classify_faces(m)
    assert len(classes["fluid_boundary"]) + len(classes["solid_boundary"]) == 6
    assert len(classes["fluid_interior"]) == 0 and len(classes["solid_interior"]) == 0


def test_cartesian_level2_counts():
    m = generate(MeshGenSpec("cartesian", 2, **BILAYER))
    assert int(np.sum(m.subdomain == FLUID)) == 16
    assert int(np.sum(m.subdomain == SOLID)) == 16
    assert len(m.interface_faces) == 4


def test_cartesian_level1_interface_count():
    m = generate(MeshGenSpec("cartesian", 1, **BILAYER))
    assert len(m.interface_faces) == 2


def test_simplicial_counts():
    m = generate(MeshGenSpec("simplicial", 2, **BILAYER))
    # near-equilateral triangles with area close to the cartesian cell area
    assert all(len(loop) == 3 for loop in m.cell_vertices)
    assert abs(np.sum(m.cell_area) - 2.0) < 1e-12
    h2 = 0.25**2
    assert 0.3 * h2 < np.median(m.cell_area) < 0.7 * h2
    assert len(m.interface_faces) >= 4
    # interface stays conforming between the two independently meshed layers
    for fi in m.interface_faces:
        assert m.subdomain[m.face_owner[fi]] == SOLID
        assert m.subdomain[m.face_neighbor[fi]] == FLUID


def test_hexagonal_family():
    m = generate(MeshGenSpec("polygonal-hexagonal", 2, **BILAYER))
    sizes = np.array([len(loop) for loop in m.cell_vertices])
    # hexagon-dominant interior with cut polygons at the boundary
    assert np.sum(sizes == 6) > 0.3 * m.n_cells
    assert sizes.min() >= 3
    assert len(m.interface_faces) > 0
    area = float(np.sum(m.cell_area))
    assert abs(area - 2.0) < 1e-9


def test_single_subdomain_has_no_interface():
    m = generate(MeshGenSpec("cartesian", 1, fluid_rect=(0, 0, 1, 1)))
    assert len(m.interface_faces) == 0
    assert np.all(m.subdomain == FLUID)


def test_unknown_family_rejected():
    with pytest.raises(MeshError):
        generate(MeshGenSpec("voronoi", 1, **BILAYER))


def test_incommensurate_rectangle_rejected():
    with pytest.raises(MeshError):
        generate(MeshGenSpec("cartesian", 1, fluid_rect=(0, 0, 0.3, 1.0)))


# ---------------------------------------------------------------------------
# invariants

@pytest.mark.parametrize("family", ["cartesian", "simplicial", "polygonal-hexagonal"])
def test_geometric_invariants(family):
    m = generate(MeshGenSpec(family, 2, **BILAYER))
    # areas sum to the domain measure
    assert abs(np.sum(m.cell_area) - 2.0) < 1e-12 * 2.0
    # closed boundary: sum of measure-weighted outward normals vanishes per cell
    for ci in range(m.n_cells):
        total = np.zeros(2)
        for j, fi in enumerate(m.cell_faces[ci]):
            total += m.face_measure[fi] * m.face_normal[fi] * m.cell_face_orient[ci][j]
        assert np.max(np.abs(total)) < 1e-12
    # interior faces adjoin exactly two cells listing them once each
    for fi in range(m.n_faces):
        owner, nb = m.face_owner[fi], m.face_neighbor[fi]
        count = sum(int(fi in m.cell_faces[ci]) for ci in (owner, nb) if ci >= 0)
        assert count == (1 if nb == -1 else 2)
    # unit normals
    assert np.max(np.abs(np.hypot(*m.face_normal.T) - 1.0)) < 1e-13
    # interface normals point from solid into fluid
    for fi in m.interface_faces:
        d = m.cell_centroid[m.face_neighbor[fi]] - m.cell_centroid[m.face_owner[fi]]
        assert float(d @ m.face_normal[fi]) > 0


def test_classification_partitions_faces():
    m = generate(MeshGenSpec("simplicial", 3, **BILAYER))
    classes = classify_faces(m)
    ids = np.concatenate([v for v in classes.values()])
    assert len(ids) == m.n_faces
    assert len(np.unique(ids)) == m.n_faces


def test_star_shape_violation_rejected():
    hook = np.array([(0, 0), (4, 0), (4, 3), (3, 3), (3, 1), (0, 1)], dtype=float)
    with pytest.raises(MeshError):
        PolyMesh(hook, [np.arange(6)], [FLUID])


# ---------------------------------------------------------------------------
# MSH reader

MSH_TWO_TRIANGLES = """$MeshFormat
2.2 0 8
$EndMeshFormat
$PhysicalNames
2
2 1 "fluid"
2 2 "solid"
$EndPhysicalNames
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
2
1 2 2 1 0 1 3 4
2 2 2 2 0 1 2 3
$EndElements
"""


def test_read_msh_two_triangles(tmp_path):
    path = tmp_path / "two.msh"
    path.write_text(MSH_TWO_TRIANGLES)
    m = read_msh(path)
    assert m.n_cells == 2
    assert set(m.subdomain.tolist()) == {FLUID, SOLID}
    assert len(m.interface_faces) == 1


def test_read_msh_mixed_elements(tmp_path):
    # 3 quads + 2 triangles covering (0,3)x(0,1) fluid over (0,3)x(-1,0) solid
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat",
             "$PhysicalNames", "2", '2 10 "water"', '2 20 "rock"', "$EndPhysicalNames"]
    nodes = []
    coords = {}
    nid = 0
    for y in (1.0, 0.0, -1.0):
        for x in (0.0, 1.0, 2.0, 3.0):
            nid += 1
            coords[(x, y)] = nid
            nodes.append(f"{nid} {x} {y} 0")
    lines += ["$Nodes", str(len(nodes))] + nodes + ["$EndNodes"]
    elems = []

    def quad(tag, pts):
        elems.append(f"{len(elems)+1} 3 2 {tag} 0 " + " ".join(str(coords[p]) for p in pts))

    def tri(tag, pts):
        elems.append(f"{len(elems)+1} 2 2 {tag} 0 " + " ".join(str(coords[p]) for p in pts))

    quad(10, [(0, 0), (1, 0), (1, 1), (0, 1)])
    quad(10, [(1, 0), (2, 0), (2, 1), (1, 1)])
    tri(10, [(2, 0), (3, 0), (3, 1)])
    tri(10, [(2, 0), (3, 1), (2, 1)])
    quad(20, [(0, -1), (1, -1), (1, 0), (0, 0)])
    quad(20, [(1, -1), (3, -1), (3, 0), (1, 0)])
    lines += ["$Elements", str(len(elems))] + elems + ["$EndElements"]
    path = tmp_path / "mixed.msh"
    path.write_text("\n".join(lines) + "\n")
    m = read_msh(path)
    assert m.n_cells == 6
    assert int(np.sum(m.subdomain == FLUID)) == 4
    # hanging node at (2, 0) on the wide solid quad is resolved
    classes = classify_faces(m)
    assert len(classes["interface"]) == 3
    assert abs(np.sum(m.cell_area) - 6.0) < 1e-12


def test_read_msh_rejects_3d(tmp_path):
    content = MSH_TWO_TRIANGLES.replace('1 2 2 1 0 1 3 4', '1 4 2 1 0 1 2 3 4')
    path = tmp_path / "tet.msh"
    path.write_text(content)
    with pytest.raises(MeshError, match="dimension"):
        read_msh(path)


def test_read_msh_unknown_tag(tmp_path):
    content = MSH_TWO_TRIANGLES.replace('2 1 "fluid"', '2 1 "mystery"')
    path = tmp_path / "bad.msh"
    path.write_text(content)
    with pytest.raises(MeshError, match="physical tag"):
        read_msh(path)
    # an explicit region map resolves it
    m = read_msh(path, region_map={"mystery": "fluid"})
    assert m.n_cells == 2


# ---------------------------------------------------------------------------
# nonconforming merge

def test_merge_offset_quads_makes_hexagons():
    # solid unit squares; fluid cells of width 1/2 offset by 1/4: each solid
    # top edge gains two hanging nodes (6 faces), split fluid cells gain one
    solid = quad_strip(0, 2, -1, 0, 1.0, sub=SOLID)
    fluid = quad_strip(0, 2, 0, 0.5, 0.5, offset=0.25, sub=FLUID)
    merged = merge_nonconforming(fluid, solid)
    solid_sizes = sorted(len(merged.cell_vertices[ci])
                         for ci in merged.cells_of_subdomain(SOLID))
    assert solid_sizes == [6, 6]
    fluid_sizes = [len(merged.cell_vertices[ci])
                   for ci in merged.cells_of_subdomain(FLUID)]
    assert sorted(set(fluid_sizes)) == [4, 5]
    # every interface face has one fluid and one solid neighbor
    for fi in merged.interface_faces:
        assert merged.subdomain[merged.face_owner[fi]] == SOLID
        assert merged.subdomain[merged.face_neighbor[fi]] == FLUID
    merged.validate()


def test_merge_triangles_over_squares_fig2_pattern():
    # solid squares of edge 1 under fluid triangles of base 1/2 offset by 1/4:
    # squares become hexagons; triangles whose base contains a square corner
    # become quadrilaterals, the others stay triangles
    solid = quad_strip(0, 2, -1, 0, 1.0, sub=SOLID)
    verts = [(0.0, 0.0), (0.25, 0.0), (0.75, 0.0), (1.25, 0.0), (1.75, 0.0), (2.0, 0.0),
             (0.0, 0.25), (0.5, 0.25), (1.0, 0.25), (1.5, 0.25), (2.0, 0.25)]
    cells = [
        [0, 1, 7, 6],            # left closing quad
        [1, 2, 7], [7, 2, 8],    # up triangle on [0.25,0.75], down from (0.5,0.25)
        [2, 3, 8], [8, 3, 9],    # base [0.75,1.25] contains x=1 -> gains a node
        [3, 4, 9], [9, 4, 10],
        [4, 5, 10],              # right closing triangle
    ]
    fluid = PolyMesh(np.array(verts), cells, [FLUID] * len(cells))
    merged = merge_nonconforming(fluid, solid)
    solid_sizes = sorted(len(merged.cell_vertices[ci])
                         for ci in merged.cells_of_subdomain(SOLID))
    assert solid_sizes == [6, 6]
    tri_sizes = sorted(len(merged.cell_vertices[ci])
                       for ci in merged.cells_of_subdomain(FLUID))
    # one up-triangle gains the corner hanging node at x=1
    assert tri_sizes.count(4) >= 2 and tri_sizes.count(3) >= 4


def test_merge_conforming_is_identity_like():
    solid = quad_strip(0, 2, -1, 0, 1.0, sub=SOLID)
    fluid = quad_strip(0, 2, 0, 1, 1.0, sub=FLUID)
    merged = merge_nonconforming(fluid, solid)
    assert merged.n_cells == 4
    assert all(len(loop) == 4 for loop in merged.cell_vertices)
    assert len(merged.interface_faces) == 2
    # idempotence: re-splitting the merged mesh changes nothing
    remerged = PolyMesh(merged.vertices,
                        [loop.copy() for loop in merged.cell_vertices],
                        merged.subdomain)
    assert remerged.n_faces == merged.n_faces


def test_merge_thirds_adds_two_nodes():
    solid = quad_strip(0, 3, -1, 0, 1.0, sub=SOLID)
    fluid = quad_strip(0, 3, 0, 0.5, 1.0 / 3.0, sub=FLUID)
    merged = merge_nonconforming(fluid, solid)
    for ci in merged.cells_of_subdomain(SOLID):
        assert len(merged.cell_vertices[ci]) == 6  # 4 + 2 hanging nodes
    for fi in merged.interface_faces:
        assert merged.subdomain[merged.face_owner[fi]] == SOLID
        assert merged.subdomain[merged.face_neighbor[fi]] == FLUID


def test_merge_rejects_disjoint_traces():
    solid = quad_strip(0, 2, -1, 0, 1.0, sub=SOLID)
    fluid = quad_strip(5, 7, 0, 1, 1.0, sub=FLUID)
    with pytest.raises(MeshError):
        merge_nonconforming(fluid, solid)


def test_merge_rejects_wrong_subdomains():
    fluid = quad_strip(0, 2, 0, 1, 1.0, sub=FLUID)
    with pytest.raises(MeshError):
        merge_nonconforming(fluid, fluid)


# ---------------------------------------------------------------------------
# fixture dump round-trip

def test_dump_load_roundtrip(tmp_path):
    m = generate(MeshGenSpec("polygonal-hexagonal", 1, **BILAYER))
    path = tmp_path / "mesh.txt"
    dump_text(m, path)
    back = load_text(path)
    assert back.n_cells == m.n_cells
    assert back.n_faces == m.n_faces
    assert np.allclose(np.sort(back.cell_area), np.sort(m.cell_area))
    assert np.array_equal(back.subdomain, m.subdomain)


def test_locate_cell_tie_breaks_low_id():
    m = generate(MeshGenSpec("cartesian", 1, **BILAYER))
    # a shared-edge point: the lowest cell id containing it wins
    ci = m.locate_cell((0.5, 0.5))
    others = [c for c in range(m.n_cells)
              if msh._point_in_polygon(np.array([0.5, 0.5]),
                                       m.vertices[m.cell_vertices[c]], 1e-12)]
    assert ci == min(others)
