"""Per-step scalar diagnostics and the diagnostics CSV format."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .assembly import FormSet, assemble_weighted_stiffness, discrete_laplacian
from .materials import RegularizedMaterial
from .mesh import TriSurfaceMesh, VelocityField, midedge_divergence

CSV_COLUMNS = ("time", "mass", "energy", "entropy", "excess", "u_min", "u_max", "min_div", "deg_residual", "area")
DIV_TOL = 1e-12


@dataclass(frozen=True)
class DiagnosticsRecord:
    time: float
    mass: float
    energy: float
    entropy: float
    excess: float
    u_min: float
    u_max: float
    min_div: float
    deg_residual: float
    area: float

    def as_row(self) -> list:
        return [f"{v:.17e}" for v in astuple(self)]


def compute_mass(forms: FormSet, u) -> float:
    return float(forms.lumped @ np.asarray(u, dtype=float))


def compute_energy(forms: FormSet, u, mat: RegularizedMaterial, eps: float) -> float:
    """Ginzburg-Landau energy with exact gradient term and lumped potential term."""
    u = np.asarray(u, dtype=float)
    return float(0.5 * eps * (u @ (forms.A @ u)) + (forms.lumped @ mat.F(u)) / eps)


def compute_entropy(forms: FormSet, u, mat: RegularizedMaterial) -> float:
    psi, _ = mat.entropy(np.asarray(u, dtype=float))
    return float(forms.lumped @ psi)


def compute_excess(forms: FormSet, u) -> float:
    over = np.maximum(np.abs(np.asarray(u, dtype=float)) - 1.0, 0.0)
    return float(forms.lumped @ over**2)


def assumption_check(mesh: TriSurfaceMesh, vel: VelocityField) -> tuple[float, bool]:
    """Smallest tangential divergence over the mid-edge quadrature points."""
    min_div = float(np.min(midedge_divergence(mesh, vel)))
    return min_div, min_div >= -DIV_TOL


def default_test_bank(mesh: TriSurfaceMesh) -> list:
    """Interpolants of the real spherical-harmonic polynomials of degree <= 2.

    Evaluated at the radial projection of each vertex, so the fields are
    transported unchanged by radial motion of a sphere.
    """
    d = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
    x, y, z = d.T
    return [np.ones_like(x), x, y, z, x * y, y * z, x * z, 0.5 * (x**2 - y**2), 0.5 * (3 * z**2 - 1)]


def degenerate_residual(state, forms: FormSet, prev_state, prev_forms: FormSet, mat: RegularizedMaterial,
                        eps: float, test_bank: Sequence) -> float:
    """Weak residual of the single-equation degenerate form against a test bank.

    For each test field ``phi`` this evaluates

        [phi.M_L u - phi.M_L_old u_old]/dt + eps c(u, M(u), phi) + (1/eps) a(M(u) F''(u), u, phi)

    with ``c(u, m, phi) = -(grad Lap_h u, m grad phi)``, and returns the
    largest ``|residual| / (1 + ||phi||_L2)``.
    """
    if prev_state is None:
        return 0.0
    dt = state.time - prev_state.time
    u = np.asarray(state.u, dtype=float)
    u_old = np.asarray(prev_state.u, dtype=float)
    mesh = forms.mesh
    lap = discrete_laplacian(forms, u)
    K_mob = assemble_weighted_stiffness(mesh, u, mat.M)
    K_pot = assemble_weighted_stiffness(mesh, u, lambda r: mat.M(r) * mat.d2F(r))
    transport = (forms.lumped * u - prev_forms.lumped * u_old) / dt
    flux = -eps * (K_mob @ lap) + (K_pot @ u) / eps
    worst = 0.0
    for phi in test_bank:
        phi = np.asarray(phi, dtype=float)
        res = phi @ transport + phi @ flux
        norm = np.sqrt(phi @ (forms.M @ phi))
        worst = max(worst, abs(res) / (1.0 + norm))
    return float(worst)


def make_record(state, forms: FormSet, mat: RegularizedMaterial, vel: VelocityField, cfg, prev_state=None,
                prev_forms: Optional[FormSet] = None, test_bank=None) -> DiagnosticsRecord:
    u = np.asarray(state.u, dtype=float)
    if callable(test_bank):
        test_bank = test_bank(state.mesh)
    deg = 0.0
    if prev_state is not None and test_bank:
        deg = degenerate_residual(state, forms, prev_state, prev_forms, mat, cfg.epsilon, test_bank)
    min_div, _ = assumption_check(state.mesh, vel)
    return DiagnosticsRecord(
        time=state.time,
        mass=compute_mass(forms, u),
        energy=compute_energy(forms, u, mat, cfg.epsilon),
        entropy=compute_entropy(forms, u, mat),
        excess=compute_excess(forms, u),
        u_min=float(u.min()),
        u_max=float(u.max()),
        min_div=min_div,
        deg_residual=deg,
        area=forms.area,
    )


def write_csv(path, records: Iterable[DiagnosticsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.as_row())


class CSVSchemaError(ValueError):
    pass


def read_csv(path) -> list:
    """Read a diagnostics CSV, validating the header and every row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise CSVSchemaError(f"bad header in {path}: {rows[0] if rows else None}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_COLUMNS):
            raise CSVSchemaError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} columns, got {len(row)}")
        try:
            out.append(DiagnosticsRecord(*(float(v) for v in row)))
        except ValueError as exc:
            raise CSVSchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


assert tuple(f.name for f in fields(DiagnosticsRecord)) == CSV_COLUMNS
