"""Scaled monomial bases and quadrature on polygonal cells and segment faces.

Cell bases are 2-variate monomials centered at the cell barycenter and scaled
by half the cell diameter; face bases are 1-variate monomials in the arclength
coordinate centered at the face midpoint and scaled by half the face length.
Cell quadrature triangulates the polygon as a fan around the barycenter
(valid for cells star-shaped with respect to it) and applies a collapsed
Gauss-Legendre product rule on each triangle; face quadrature is plain
Gauss-Legendre.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

MAX_EXACTNESS = 30


class QuadratureError(Exception):
    pass


# ---------------------------------------------------------------------------
# dimensions and exponents

def scalar_cell_dim(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def scalar_face_dim(k: int) -> int:
    return k + 1


def basis_dim(kind: str, support: str, k: int) -> int:
    """Dimension of a local polynomial space.

    kind: 'scalar', 'vector2' or 'symtensor2'; support: 'cell' or 'face'.
    """
    if support == "cell":
        base = scalar_cell_dim(k)
    elif support == "face":
        base = scalar_face_dim(k)
    else:
        raise ValueError(f"unknown support {support!r}")
    mult = {"scalar": 1, "vector2": 2, "symtensor2": 3}
    if kind not in mult:
        raise ValueError(f"unknown basis kind {kind!r}")
    return mult[kind] * base


@lru_cache(maxsize=None)
def monomial_exponents(k: int) -> np.ndarray:
    """Exponent pairs (a, b) of the 2-variate monomials up to degree k.

    Graded lexicographic ordering: by total degree, then by decreasing a.
    """
    exps = [(d - j, j) for d in range(k + 1) for j in range(d + 1)]
    out = np.array(exps, dtype=np.int64)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# bases

class CellBasis:
    """Scaled monomial basis of P^k on a 2D cell.

    Basis function i is ((x - xc)/r)^a ((y - yc)/r)^b with r = h_T/2 and
    (a, b) running over `monomial_exponents(k)`.
    """

    def __init__(self, center, diameter: float, degree: int):
        self.center = np.asarray(center, dtype=float)
        self.half = 0.5 * float(diameter)
        self.degree = int(degree)
        self.exponents = monomial_exponents(self.degree)
        self.dim = len(self.exponents)

    def eval(self, points) -> np.ndarray:
        """Values at `points` (n, 2); returns (n, dim)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        xi = (pts[:, 0] - self.center[0]) / self.half
        eta = (pts[:, 1] - self.center[1]) / self.half
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        return xi[:, None] ** a[None, :] * eta[:, None] ** b[None, :]

    def grad(self, points) -> np.ndarray:
        """Gradients at `points`; returns (n, dim, 2)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        xi = (pts[:, 0] - self.center[0]) / self.half
        eta = (pts[:, 1] - self.center[1]) / self.half
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        # d/dx xi^a eta^b = (a/r) xi^(a-1) eta^b, with the a=0 term vanishing
        pow_xa = np.where(a[None, :] >= 1, xi[:, None] ** np.maximum(a - 1, 0)[None, :], 0.0)
        pow_yb = np.where(b[None, :] >= 1, eta[:, None] ** np.maximum(b - 1, 0)[None, :], 0.0)
        gx = a[None, :] * pow_xa * eta[:, None] ** b[None, :] / self.half
        gy = b[None, :] * xi[:, None] ** a[None, :] * pow_yb / self.half
        return np.stack([gx, gy], axis=-1)


class FaceBasis:
    """Scaled monomial basis of P^k on a straight face (segment).

    Basis function i is ((x - x_F) . t_F / (|F|/2))^i with t_F the unit
    tangent and x_F the midpoint.
    """

    def __init__(self, v0, v1, degree: int):
        self.v0 = np.asarray(v0, dtype=float)
        self.v1 = np.asarray(v1, dtype=float)
        delta = self.v1 - self.v0
        self.length = float(np.hypot(*delta))
        if self.length <= 0.0:
            raise ValueError("degenerate face")
        self.midpoint = 0.5 * (self.v0 + self.v1)
        self.tangent = delta / self.length
        self.half = 0.5 * self.length
        self.degree = int(degree)
        self.dim = degree + 1

    def eval(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        s = (pts - self.midpoint) @ self.tangent / self.half
        return s[:, None] ** np.arange(self.dim)[None, :]


# ---------------------------------------------------------------------------
# quadrature

@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def _reference_triangle_rule(degree: int):
    """Positive-weight rule on the triangle (0,0)-(1,0)-(0,1), exact to `degree`.

    Collapsed (Duffy) Gauss-Legendre product rule: x = u(1-v), y = uv with
    Jacobian u. A monomial of total degree d pulls back to degree d+1 in u,
    so n points per direction with 2n-1 >= degree+1 suffice.
    """
    if degree > MAX_EXACTNESS:
        raise QuadratureError(f"exactness degree {degree} beyond implemented table")
    n = max(1, (degree + 2 + 1) // 2)
    xg, wg = _gauss_legendre(n)
    u = 0.5 * (xg + 1.0)
    wu = 0.5 * wg
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(wu * u, wu)
    pts = np.column_stack([(uu * (1.0 - vv)).ravel(), (uu * vv).ravel()])
    w = ww.ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def triangle_quadrature(p0, p1, p2, degree: int):
    """Quadrature on the triangle (p0, p1, p2), exact for degree `degree`."""
    ref_pts, ref_w = _reference_triangle_rule(degree)
    p0 = np.asarray(p0, dtype=float)
    e1 = np.asarray(p1, dtype=float) - p0
    e2 = np.asarray(p2, dtype=float) - p0
    det = e1[0] * e2[1] - e1[1] * e2[0]
    pts = p0[None, :] + ref_pts[:, 0:1] * e1[None, :] + ref_pts[:, 1:2] * e2[None, :]
    return pts, ref_w * abs(det)


def polygon_quadrature(vertices, degree: int, center=None):
    """Quadrature on a polygon via barycentric fan triangulation.

    The polygon must be star-shaped with respect to `center` (defaults to the
    area centroid); raises QuadratureError otherwise.
    """
    verts = np.asarray(vertices, dtype=float)
    if center is None:
        center = polygon_centroid(verts)
    center = np.asarray(center, dtype=float)
    all_pts = []
    all_w = []
    n = len(verts)
    area = polygon_area(verts)
    for i in range(n):
        p1 = verts[i]
        p2 = verts[(i + 1) % n]
        tri_signed = 0.5 * ((p1[0] - center[0]) * (p2[1] - center[1])
                            - (p1[1] - center[1]) * (p2[0] - center[0]))
        if tri_signed <= 1e-14 * abs(area):
            raise QuadratureError("polygon not star-shaped with respect to its barycenter")
        pts, w = triangle_quadrature(center, p1, p2, degree)
        all_pts.append(pts)
        all_w.append(w)
    return np.concatenate(all_pts), np.concatenate(all_w)


def segment_quadrature(v0, v1, degree: int):
    """Gauss-Legendre quadrature on the segment [v0, v1], exact for `degree`."""
    if degree > 2 * MAX_EXACTNESS:
        raise QuadratureError(f"exactness degree {degree} beyond implemented table")
    n = max(1, (degree + 1 + 1) // 2)
    xg, wg = _gauss_legendre(n)
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    mid = 0.5 * (v0 + v1)
    half = 0.5 * (v1 - v0)
    pts = mid[None, :] + xg[:, None] * half[None, :]
    return pts, wg * 0.5 * float(np.hypot(*(v1 - v0)))


# ---------------------------------------------------------------------------
# polygon geometry helpers

def polygon_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_centroid(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(np.sum(cross))
    cx = float(np.sum((x + xn) * cross)) / (6.0 * area)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * area)
    return np.array([cx, cy])


def polygon_diameter(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    diff = v[:, None, :] - v[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


# ---------------------------------------------------------------------------
# L2 projections

def project_face(fn, face_basis: FaceBasis, degree_hint: int | None = None) -> np.ndarray:
    """Coefficients of the L2(F)-orthogonal projection of `fn` onto the face basis.

    `fn` maps an (n, 2) array of points to (n,) values.
    """
    deg = 2 * face_basis.degree if degree_hint is None else face_basis.degree + degree_hint
    pts, w = segment_quadrature(face_basis.v0, face_basis.v1, deg)
    phi = face_basis.eval(pts)
    mass = phi.T @ (w[:, None] * phi)
    rhs = phi.T @ (w * np.asarray(fn(pts), dtype=float))
    try:
        return np.linalg.solve(mass, rhs)
    except np.linalg.LinAlgError as exc:  # |F| > 0 makes this impossible
        raise QuadratureError("singular face mass matrix") from exc


def project_cell(fn, cell_basis: CellBasis, vertices, center=None,
                 degree_hint: int | None = None) -> np.ndarray:
    """Coefficients of the L2(T)-orthogonal projection of `fn` onto the cell basis."""
    deg = 2 * cell_basis.degree if degree_hint is None else cell_basis.degree + degree_hint
    pts, w = polygon_quadrature(vertices, deg, center=center)
    phi = cell_basis.eval(pts)
    mass = phi.T @ (w[:, None] * phi)
    rhs = phi.T @ (w * np.asarray(fn(pts), dtype=float))
    return np.linalg.solve(mass, rhs)
