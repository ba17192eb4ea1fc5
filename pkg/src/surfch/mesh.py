"""Closed triangulated surfaces, prescribed velocity fields and mesh transport."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

AREA_TOL = 1e-14
FD_STEP = 1e-6


class MeshError(ValueError):
    """Raised when a mesh is not a valid closed, oriented, non-degenerate surface."""


@dataclass(frozen=True, eq=False)
class TriSurfaceMesh:
    """Immutable snapshot of a closed oriented triangulated surface.

    Parameters
    ----------
    vertices : (N, 3) array
        Vertex positions.
    triangles : (T, 3) int array
        Vertex indices of each triangle, counter-clockwise seen from outside.
    time : float
        Simulation time the snapshot belongs to.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        t = np.array(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must have shape (N, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (T, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "time", float(self.time))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _cross(self) -> np.ndarray:
        x = self.vertices[self.triangles]
        return np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        return self._cross / (2.0 * self.areas[:, None])

    @cached_property
    def gradients(self) -> np.ndarray:
        """(T, 3, 3) array: surface gradient of each element's three hat functions."""
        x = self.vertices[self.triangles]
        # edge opposite local vertex i runs from vertex i+1 to vertex i+2
        edges = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        n = self.normals[:, None, :]
        return np.cross(n, edges) / (2.0 * self.areas[:, None, None])

    @cached_property
    def midedge_points(self) -> np.ndarray:
        """(T, 3, 3) array of edge midpoints; entry q is opposite local vertex q."""
        x = self.vertices[self.triangles]
        return 0.5 * np.stack([x[:, 1] + x[:, 2], x[:, 2] + x[:, 0], x[:, 0] + x[:, 1]], axis=1)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    def check(self) -> None:
        """Raise :class:`MeshError` unless the mesh is closed, oriented and non-degenerate."""
        bad = np.flatnonzero(self.areas <= AREA_TOL)
        if bad.size:
            raise MeshError(f"degenerate triangle(s) {bad[:5].tolist()} (area <= {AREA_TOL})")
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        keys = directed[:, 0] * self.n_vertices + directed[:, 1]
        if np.unique(keys).size != keys.size:
            raise MeshError("inconsistent orientation: a directed edge appears twice")
        reverse = directed[:, 1] * self.n_vertices + directed[:, 0]
        if not np.isin(reverse, keys).all():
            raise MeshError("surface is not closed: boundary edge found")

    def with_vertices(self, vertices: np.ndarray, time: float) -> "TriSurfaceMesh":
        return TriSurfaceMesh(vertices, self.triangles, time)


def element_geometry(mesh: TriSurfaceMesh, tri: int):
    """Area, unit normal and hat-function gradients of one triangle."""
    if not 0 <= tri < mesh.n_triangles:
        raise IndexError(f"triangle {tri} out of range")
    area = mesh.areas[tri]
    if area <= AREA_TOL:
        raise MeshError(f"triangle {tri} is degenerate (area {area:.3e})")
    return float(area), mesh.normals[tri].copy(), mesh.gradients[tri].copy()


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTICES = np.array(
    [
        [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
        [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
        [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
    ],
    dtype=float,
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


def build_icosphere(subdivisions: int, radius: float = 1.0) -> TriSurfaceMesh:
    """Sphere triangulation by repeated edge-midpoint refinement of an icosahedron.

    Returns ``10 * 4**s + 2`` vertices and ``20 * 4**s`` triangles, all on
    the sphere of the given radius and oriented with outward normals.
    """
    if subdivisions < 0:
        raise ValueError("subdivisions must be nonnegative")
    if radius <= 0:
        raise ValueError("radius must be positive")
    verts = _ICO_VERTICES / np.linalg.norm(_ICO_VERTICES, axis=1, keepdims=True)
    faces = _ICO_FACES.copy()
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
        uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        nf = len(faces)
        m01 = len(verts) + inverse[:nf]
        m12 = len(verts) + inverse[nf:2 * nf]
        m20 = len(verts) + inverse[2 * nf:]
        a, b, c = faces.T
        faces = np.concatenate(
            [
                np.stack([a, m01, m20], axis=1),
                np.stack([b, m12, m01], axis=1),
                np.stack([c, m20, m12], axis=1),
                np.stack([m01, m12, m20], axis=1),
            ]
        )
        verts = np.vstack([verts, mids])
    mesh = TriSurfaceMesh(radius * verts, faces, 0.0)
    mesh.check()
    return mesh


@dataclass(frozen=True)
class VelocityField:
    """Prescribed surface velocity.

    ``kind`` is one of ``"stationary"``, ``"radial_expansion"`` (V = a x/|x|),
    ``"linear_scaling"`` (V = alpha x) or ``"custom"``.  Custom fields supply
    ``func(x, t)`` acting on (n, 3) arrays and optionally ``divergence(x, t, normal)``;
    without the latter the tangential divergence is taken from a centred
    finite-difference Jacobian.
    """

    kind: str = "stationary"
    rate: float = 0.0
    func: Optional[Callable] = field(default=None, compare=False)
    divergence: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("stationary", "radial_expansion", "linear_scaling", "custom"):
            raise ValueError(f"unknown velocity kind {self.kind!r}")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom velocity requires func")

    @classmethod
    def stationary(cls) -> "VelocityField":
        return cls("stationary")

    @classmethod
    def radial_expansion(cls, rate: float) -> "VelocityField":
        return cls("radial_expansion", rate)

    @classmethod
    def linear_scaling(cls, rate: float) -> "VelocityField":
        return cls("linear_scaling", rate)

    @classmethod
    def custom(cls, func, divergence=None) -> "VelocityField":
        return cls("custom", 0.0, func, divergence)

    def __call__(self, x, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "stationary":
            return np.zeros_like(x)
        if self.kind == "radial_expansion":
            return self.rate * x / np.linalg.norm(x, axis=-1, keepdims=True)
        if self.kind == "linear_scaling":
            return self.rate * x
        return np.asarray(self.func(x, t), dtype=float)


def surface_divergence(vel: VelocityField, x, t: float, normal) -> np.ndarray:
    """Tangential divergence of ``vel`` at points ``x`` with unit normals ``normal``.

    Works on a single point or on arrays of shape (..., 3).
    """
    x = np.asarray(x, dtype=float)
    normal = np.asarray(normal, dtype=float)
    shape = x.shape[:-1]
    if vel.kind == "stationary":
        return np.zeros(shape)[()]
    if vel.kind == "radial_expansion":
        return (2.0 * vel.rate / np.linalg.norm(x, axis=-1))[()]
    if vel.kind == "linear_scaling":
        return np.full(shape, 2.0 * vel.rate)[()]
    if vel.divergence is not None:
        return np.asarray(vel.divergence(x, t, normal), dtype=float)[()]
    pts = x.reshape(-1, 3)
    nrm = normal.reshape(-1, 3)
    jac = np.empty((len(pts), 3, 3))  # jac[:, i, j] = dV_i / dx_j
    for j in range(3):
        e = np.zeros(3)
        e[j] = FD_STEP
        jac[:, :, j] = (vel(pts + e, t) - vel(pts - e, t)) / (2.0 * FD_STEP)
    trace = np.trace(jac, axis1=1, axis2=2)
    normal_part = np.einsum("ni,nij,nj->n", nrm, jac, nrm)
    return (trace - normal_part).reshape(shape)[()]


def midedge_divergence(mesh: TriSurfaceMesh, vel: VelocityField) -> np.ndarray:
    """(T, 3) tangential divergence at the element mid-edge quadrature points."""
    normals = np.broadcast_to(mesh.normals[:, None, :], mesh.midedge_points.shape)
    return np.asarray(surface_divergence(vel, mesh.midedge_points, mesh.time, normals))


def advance_mesh(mesh: TriSurfaceMesh, vel: VelocityField, dt: float) -> TriSurfaceMesh:
    """Move every vertex along the flow of ``vel`` by one classical RK4 step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, t = mesh.vertices, mesh.time
    if vel.kind == "stationary":
        new = mesh.with_vertices(x, t + dt)
    else:
        k1 = vel(x, t)
        k2 = vel(x + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = vel(x + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = vel(x + dt * k3, t + dt)
        new = mesh.with_vertices(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), t + dt)
    new.check()
    return new


def write_vtk(path, mesh: TriSurfaceMesh, fields: Optional[dict] = None, title: str = "surfch") -> None:
    """Write a legacy ASCII VTK POLYDATA file with optional point scalars."""
    fields = fields or {}
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}" for p in mesh.vertices]
    lines.append(f"POLYGONS {mesh.n_triangles} {4 * mesh.n_triangles}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    if fields:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in fields.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (mesh.n_vertices,):
                raise ValueError(f"field {name!r} has wrong length")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
