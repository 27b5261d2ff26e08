"""Temporal meshes: graded construction, derived quantities, regularity checks.

All derived sequences are returned as arrays of length M+1 aligned with the node
index j, with unused leading entries set to NaN (tau and tilde start at j=1;
rho and sigma start at j=2). This keeps formulas readable against the usual
one-based mesh notation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "MeshSpec",
    "TemporalMesh",
    "MeshQuantities",
    "RegularityReport",
    "build_graded",
    "mesh_quantities",
    "check_mesh_regularity",
    "save_mesh",
    "load_mesh",
]


@dataclass(frozen=True)
class MeshSpec:
    """Parameters of a graded temporal mesh on [0, T].

    ``variant`` is one of ``"uniform"``, ``"graded"``, ``"modified_graded"``.
    ``K`` is the grading offset of the modified variant (K=1 reproduces the
    standard graded mesh); it is ignored for the other variants.
    """

    T: float
    M: int
    r: float = 1.0
    variant: str = "graded"
    K: int = 1

    def __post_init__(self) -> None:
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.M < 2:
            raise ValueError(f"M must be at least 2, got {self.M}")
        if self.r < 1:
            raise ValueError(f"grading exponent r must be >= 1, got {self.r}")
        if self.variant not in ("uniform", "graded", "modified_graded"):
            raise ValueError(f"unknown mesh variant {self.variant!r}")
        if self.variant == "uniform" and self.r != 1:
            raise ValueError("uniform variant requires r = 1")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")


class TemporalMesh:
    """Strictly increasing nodes 0 = t_0 < t_1 < ... < t_M = T."""

    def __init__(self, nodes: np.ndarray, spec: MeshSpec | None = None):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("mesh needs at least 3 nodes (M >= 2)")
        if nodes[0] != 0.0:
            raise ValueError(f"t_0 must be 0, got {nodes[0]}")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("mesh nodes must be strictly increasing")
        self.nodes = nodes
        self.nodes.flags.writeable = False
        self.spec = spec
        self._quantities: MeshQuantities | None = None

    @property
    def M(self) -> int:
        return self.nodes.size - 1

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def tau(self) -> np.ndarray:
        return self.quantities.tau

    @property
    def rho(self) -> np.ndarray:
        return self.quantities.rho

    @property
    def sigma(self) -> np.ndarray:
        return self.quantities.sigma

    @property
    def tilde(self) -> np.ndarray:
        return self.quantities.tilde

    @property
    def quantities(self) -> "MeshQuantities":
        if self._quantities is None:
            self._quantities = mesh_quantities(self)
        return self._quantities

    def __repr__(self) -> str:
        return f"TemporalMesh(M={self.M}, T={self.T}, spec={self.spec})"


@dataclass(frozen=True)
class MeshQuantities:
    """Derived step sequences; index j, NaN where a quantity is undefined."""

    tau: np.ndarray    # tau[j] = t_j - t_{j-1}, j >= 1
    tilde: np.ndarray  # tilde[1] = tau_1, tilde[j] = (tau_{j-1}+tau_j)/2, j >= 2
    rho: np.ndarray    # rho[j] = tau_j / tau_{j-1}, j >= 2
    sigma: np.ndarray  # sigma[j] = (tau_j - tau_{j-1}) / (tau_j + tau_{j-1}), j >= 2


def build_graded(spec: MeshSpec) -> TemporalMesh:
    """Build the mesh t_j = T * that_j / that_M, that_j = ((j+K-1)/M)^r - ((K-1)/M)^r.

    K=1 (and the plain graded/uniform variants) reduce to t_j = T (j/M)^r.
    """
    M, r, T = spec.M, spec.r, spec.T
    j = np.arange(M + 1, dtype=float)
    if spec.variant == "modified_graded" and spec.K > 1:
        Kp = spec.K - 1
        that = ((j + Kp) / M) ** r - (Kp / M) ** r
        nodes = T * (that / that[-1])
    else:
        nodes = T * (j / M) ** r
    nodes[0] = 0.0
    nodes[-1] = T
    mesh = TemporalMesh(nodes, spec=spec)
    # library pow can in principle break monotonicity at extreme r*M; fail loudly
    if not np.all(np.diff(nodes) > 0):
        raise FloatingPointError("graded mesh construction lost monotonicity")
    return mesh


def mesh_quantities(mesh: TemporalMesh) -> MeshQuantities:
    t = mesh.nodes
    M = mesh.M
    tau = np.full(M + 1, np.nan)
    tau[1:] = np.diff(t)
    tilde = np.full(M + 1, np.nan)
    tilde[1] = tau[1]
    tilde[2:] = 0.5 * (tau[1:-1] + tau[2:])
    rho = np.full(M + 1, np.nan)
    rho[2:] = tau[2:] / tau[1:-1]
    sigma = np.full(M + 1, np.nan)
    sigma[2:] = (tau[2:] - tau[1:-1]) / (tau[2:] + tau[1:-1])
    if not np.all(np.abs(sigma[2:]) < 1.0):
        raise FloatingPointError("sigma out of (-1, 1); degenerate steps")
    return MeshQuantities(tau=tau, tilde=tilde, rho=rho, sigma=sigma)


@dataclass(frozen=True)
class RegularityReport:
    """Diagnostic summary of a mesh against the graded-mesh hypotheses."""

    sigma_monotone_nonneg: bool
    first_sigma_violation: int | None
    rho_monotone_ge1: bool
    max_sigma: float
    # similarity ratios for the implied-constant audit (reported, never pass/failed)
    tau1_Mr: float                 # tau_1 * M^r
    ratio_tau_range: tuple[float, float]   # min/max of tau_j * j / t_j
    ratio_node_range: tuple[float, float]  # min/max of t_j / (tau_1 * j^r)

    @property
    def ok(self) -> bool:
        return self.sigma_monotone_nonneg and self.rho_monotone_ge1


def check_mesh_regularity(mesh: TemporalMesh, r: float) -> RegularityReport:
    """Check sigma_j >= sigma_{j+1} >= 0 and rho_j >= 1, and report similarity ratios.

    Diagnostic only: never raises. Comparisons use tolerance 1e-14*max(1, |sigma|).
    """
    if mesh.M < 3:
        raise ValueError("regularity check needs M >= 3")
    q = mesh.quantities
    sig = q.sigma[2:]
    tol = 1e-14 * np.maximum(1.0, np.abs(sig))
    nonneg = sig >= -tol[: sig.size]
    decreasing = np.ones_like(nonneg)
    decreasing[1:] = np.diff(sig) <= tol[1:]
    ok_vec = nonneg & decreasing
    first_bad = None
    if not ok_vec.all():
        first_bad = int(np.argmin(ok_vec)) + 2
    rho_ok = bool(np.all(q.rho[2:] >= 1.0 - 1e-14))

    t = mesh.nodes
    j = np.arange(1, mesh.M + 1, dtype=float)
    tau = q.tau[1:]
    ratio_tau = tau * j / t[1:]
    ratio_node = t[1:] / (tau[0] * j ** r)
    return RegularityReport(
        sigma_monotone_nonneg=bool(ok_vec.all()),
        first_sigma_violation=first_bad,
        rho_monotone_ge1=rho_ok,
        max_sigma=float(np.max(sig)),
        tau1_Mr=float(tau[0] * mesh.M ** r),
        ratio_tau_range=(float(ratio_tau.min()), float(ratio_tau.max())),
        ratio_node_range=(float(ratio_node.min()), float(ratio_node.max())),
    )


def save_mesh(mesh: TemporalMesh, path: str | Path) -> None:
    """Write one node per line with a `# T=<val> M=<val>` header."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# T={float(mesh.T)!r} M={mesh.M}\n")
        for t in mesh.nodes:
            fh.write(f"{float(t)!r}\n")


def load_mesh(path: str | Path) -> TemporalMesh:
    """Read a mesh file (one node per line, optional `# T=... M=...` header)."""
    path = Path(path)
    header_T = header_M = None
    nodes: list[float] = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tokenname, cast in (("T", float), ("M", int)):
                    tag = f"{tokenname}="
                    for tok in line[1:].split():
                        if tok.startswith(tag):
                            val = cast(tok[len(tag):])
                            if tokenname == "T":
                                header_T = val
                            else:
                                header_M = val
                continue
            nodes.append(float(line))
    mesh = TemporalMesh(np.array(nodes))
    if header_M is not None and mesh.M != header_M:
        raise ValueError(f"header says M={header_M} but file has M={mesh.M}")
    if header_T is not None and not math.isclose(mesh.T, header_T, rel_tol=1e-12):
        raise ValueError(f"header says T={header_T} but last node is {mesh.T}")
    return mesh
