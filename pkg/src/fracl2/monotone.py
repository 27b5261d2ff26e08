"""Inverse-monotonicity machinery for the discrete fractional operator.

The operator row m is inverse-monotone-factorizable when its first two scaled
stencil weights satisfy two sign conditions relative to a geometric damping
schedule beta_j built from the mesh skews sigma_j. This module computes the
uniform-mesh constants, the damping schedule, the admissibility threshold
sigma_bar (fixed-point solve), the L1-prefix length K for graded meshes, the
parabolic threshold sigma_star, and the actual certification: condition
evaluation, the explicit two-factor split of the operator matrix, brute-force
inverse non-negativity, and the parabolic energy-norm step condition.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .mesh import TemporalMesh
from .operator import OperatorMatrix, _RowKernel, stencil_diagnostics

__all__ = [
    "UniformConstants",
    "MonotoneCertificate",
    "ConditionReport",
    "FactorPair",
    "EnergyReport",
    "SigmaBarResult",
    "uniform_constants",
    "eta",
    "beta_schedule",
    "sigma_bar",
    "sigma_bar_iterates",
    "compute_K",
    "sigma_star",
    "certify",
    "factorize",
    "verify_inverse_nonneg",
    "check_energy_condition",
]


@dataclass(frozen=True)
class UniformConstants:
    """Closed-form stencil constants of the uniform mesh."""

    alpha: float
    B: float        # diagonal weight, (alpha+2)/((1-alpha)(2-alpha))
    A_prime: float  # subdiagonal weight, 4*alpha/((1-alpha)(2-alpha))
    nu: float       # damping reserve, 1 - (1-alpha)/48

    @property
    def beta_uniform_theta1(self) -> float:
        return self.nu * 2.0 * self.alpha / (self.alpha + 2.0)


def uniform_constants(alpha: float) -> UniformConstants:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    den = (1.0 - alpha) * (2.0 - alpha)
    return UniformConstants(
        alpha=alpha,
        B=(alpha + 2.0) / den,
        A_prime=4.0 * alpha / den,
        nu=1.0 - (1.0 - alpha) / 48.0,
    )


def eta(sigma: float, alpha: float) -> float:
    """Damping capacity of a step with skew sigma; decreasing, positive on [0,1)."""
    if not 0.0 <= sigma < 1.0:
        raise ValueError(f"sigma must be in [0,1), got {sigma}")
    uc = uniform_constants(alpha)
    return (1.0 - sigma * sigma) * (uc.B / uc.A_prime - sigma / (2.0 * (1.0 + sigma)))


def beta_schedule(mesh: TemporalMesh, alpha: float, theta: float, K: int = 1) -> np.ndarray:
    """Damping factors beta_1..beta_M (index 0 is a structural zero).

    beta_j = (theta/2) nu / eta(sigma_j) for j >= 2 and beta_1 = beta_2; when
    K > 1 (the L1-prefix operator variant) the first K entries are overridden
    by beta_{K+1} so the prefix rows share the damping of the first quadratic row.
    """
    _check_theta(theta)
    uc = uniform_constants(alpha)
    M = mesh.M
    sig = mesh.sigma
    betas = np.zeros(M + 1)
    if np.any(sig[2:] < 0):
        # eta is defined on [0,1); negative skew only tightens damping capacity,
        # so clamp for schedule purposes (certification checks signs directly)
        sig = np.maximum(sig, 0.0)
    etas = (1.0 - sig[2:] ** 2) * (uc.B / uc.A_prime - sig[2:] / (2.0 * (1.0 + sig[2:])))
    betas[2:] = 0.5 * theta * uc.nu / etas
    betas[1] = betas[2] if M >= 2 else 0.5 * theta * uc.nu / (uc.B / uc.A_prime)
    if K > 1:
        k_end = min(K, M - 1)
        betas[1 : k_end + 1] = betas[k_end + 1]
    return betas


@dataclass(frozen=True)
class SigmaBarResult:
    value: float
    iterates: np.ndarray
    residual: float
    converged: bool


def _gl_gr(alpha: float, theta: float):
    uc = uniform_constants(alpha)
    c = (2.0 + 5.0 * alpha - alpha * alpha) / (4.0 * alpha)
    b = uc.nu * uc.nu * theta * (2.0 - theta)

    def g_left(s: float) -> float:
        return (1.0 - s) * (c * (1.0 + s) - s)

    def g_right(s: float) -> float:
        base = 1.0 + (1.0 - s * s) / uc.A_prime
        return 1.0 + math.sqrt(base * base - b)

    return g_left, g_right, c


def sigma_bar_iterates(alpha: float, theta: float, tol: float = 1e-12,
                       max_iter: int = 200) -> SigmaBarResult:
    """Fixed-point solve of g_left(sigma) = g_right(sigma), smallest root.

    Starting from 0 (where g_left > g_right holds strictly), each step inverts
    the downward parabola g_left at the current g_right value via the stable
    quadratic formula; the iterates increase monotonically to sigma_bar.
    """
    _check_theta(theta)
    g_left, g_right, c = _gl_gr(alpha, theta)
    if not g_left(0.0) > g_right(0.0):
        raise RuntimeError("expected g_left(0) > g_right(0); invalid parameters")
    its = [0.0]
    s = 0.0
    step_tol = 1e-13
    for _ in range(max_iter):
        y = g_right(s)
        # solve (c-1) s^2 + s - (c - y) = 0 for the root in (0,1)
        cm1 = c - 1.0
        rhs = c - y
        s_new = 2.0 * rhs / (1.0 + math.sqrt(1.0 + 4.0 * cm1 * rhs))
        its.append(s_new)
        if abs(s_new - s) <= step_tol and abs(g_left(s_new) - g_right(s_new)) <= tol:
            return SigmaBarResult(value=s_new, iterates=np.array(its),
                                  residual=abs(g_left(s_new) - g_right(s_new)),
                                  converged=True)
        s = s_new
    raise RuntimeError(f"sigma_bar iteration did not converge in {max_iter} steps "
                       f"(alpha={alpha}, theta={theta})")


def sigma_bar(alpha: float, theta: float, tol: float = 1e-12) -> float:
    """Admissibility threshold for the mesh skews sigma_j."""
    return sigma_bar_iterates(alpha, theta, tol=tol).value


def compute_K(r: float, sigma_bar_value: float) -> int:
    """Smallest K >= 1 with ((1+1/K)^r - 1)/(1 - (1-1/K)^r) <= 2/(1-sigma_bar) - 1.

    A graded mesh offset by K (or an L1 prefix of length K) has admissible
    skew from the first quadratic row onward.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    if not 0.0 < sigma_bar_value < 1.0:
        raise ValueError(f"sigma_bar must be in (0,1), got {sigma_bar_value}")
    rho_bar = 2.0 / (1.0 - sigma_bar_value) - 1.0
    if 2.0 ** r - 1.0 <= rho_bar:
        return 1
    K = 2
    while True:
        ratio = ((1.0 + 1.0 / K) ** r - 1.0) / (1.0 - (1.0 - 1.0 / K) ** r)
        if ratio <= rho_bar:
            return K
        K += 1
        if K > 10**6:
            raise RuntimeError("K search did not terminate; inputs out of range")


def sigma_star(alpha: float, theta: float) -> float:
    """Parabolic admissibility threshold min{sigma_bar, 1 - 2/(1+rho*)}.

    rho* = ((2-theta)/theta)^{2/alpha}; theta = 1 is rejected (rho* = 1 makes
    the threshold degenerate and the parabolic energy argument needs theta < 1).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    if not 0.5 <= theta < 1.0:
        raise ValueError(f"theta must be in [1/2, 1) for the parabolic threshold, got {theta}")
    rho_star = ((2.0 - theta) / theta) ** (2.0 / alpha)
    return min(sigma_bar(alpha, theta), 1.0 - 2.0 / (1.0 + rho_star))


@dataclass(frozen=True)
class ConditionReport:
    name: str
    description: str
    passed: bool
    n_checked: int
    first_violation_m: int | None
    worst_margin: float
    worst_m: int


@dataclass(frozen=True)
class MonotoneCertificate:
    """Evidence that the operator factors into two M-matrices on this mesh."""

    alpha: float
    theta: float
    variant: str
    K: int
    M: int
    sigma_bar: float
    rho_bar: float
    betas: np.ndarray
    conditions: tuple[ConditionReport, ...]
    betas_in_unit: bool
    sigma_monotone: bool
    sigma_admissible: bool
    ratio_bound_ok: bool
    inverse_checked: bool = False
    inverse_min_entry: float | None = None

    @property
    def passed(self) -> bool:
        return (self.betas_in_unit and self.sigma_monotone
                and all(c.passed for c in self.conditions))

    def to_dict(self) -> dict:
        b = self.betas[1:]
        return {
            "alpha": self.alpha,
            "theta": self.theta,
            "variant": self.variant,
            "K": self.K,
            "M": self.M,
            "sigma_bar": self.sigma_bar,
            "rho_bar": self.rho_bar,
            "betas_summary": {
                "first": float(b[0]),
                "last": float(b[-1]),
                "min": float(b.min()),
                "max": float(b.max()),
            },
            "conditions": [
                {
                    "name": c.name,
                    "description": c.description,
                    "passed": c.passed,
                    "n_checked": c.n_checked,
                    "first_violation_m": c.first_violation_m,
                    "worst_margin": c.worst_margin,
                    "worst_m": c.worst_m,
                }
                for c in self.conditions
            ],
            "betas_in_unit": self.betas_in_unit,
            "sigma_monotone": self.sigma_monotone,
            "sigma_admissible": self.sigma_admissible,
            "ratio_bound_ok": self.ratio_bound_ok,
            "inverse_checked": self.inverse_checked,
            "inverse_min_entry": self.inverse_min_entry,
            "passed": self.passed,
        }

    def to_json(self, path: str | Path | None = None, indent: int = 2) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def certify(mesh: TemporalMesh, alpha: float, theta: float = 1.0,
            variant: str = "standard", K: int | None = None,
            verify_inverse: bool = False, inverse_cap: int = 512) -> MonotoneCertificate:
    """Evaluate the two factorization sign conditions and mesh admissibility.

    K is the linear-prefix length of the l1_start variant; skew admissibility
    is then only required past the prefix (j >= K+1). Offset-graded meshes
    bake their shift into the nodes and are certified with variant="standard".
    Failures are recorded in the certificate, never raised: the tool's job
    includes exhibiting failures on adversarial meshes.
    """
    _check_theta(theta)
    if variant not in ("standard", "l1_start"):
        raise ValueError(f"unknown operator variant {variant!r}")
    if variant == "l1_start" and K is None:
        raise ValueError("l1_start variant needs an explicit prefix length K")
    K = 1 if K is None else int(K)
    sb = sigma_bar(alpha, theta)
    betas = beta_schedule(mesh, alpha, theta, K=K)
    diags = stencil_diagnostics(mesh, alpha, variant=variant, K=K)
    M = mesh.M

    m_all = np.arange(1, M + 1)
    # subdiagonal condition: A_m - beta_m B_m > 0  <=>  first subdiagonal of the
    # lower factor is strictly negative
    c1 = diags.A[1:] - betas[1:] * diags.B[1:]
    cond1 = _condition_report(
        "subdiagonal", "A_m - beta_m*B_m > 0 for all m >= 1",
        values=c1, ms=m_all, passes=c1 > 0.0, worst_is_min=True)
    # second-subdiagonal condition: (A-B+F) - beta_{m-1}(A - beta_m B) <= 0
    c2 = (diags.A[2:] - diags.B[2:] + diags.F[2:]) - betas[1:-1] * c1[1:]
    tol2 = 1e-12 * np.maximum(1.0, np.abs(diags.A[2:]))
    cond2 = _condition_report(
        "second_subdiagonal",
        "(A_m - B_m + F_m) - beta_{m-1}(A_m - beta_m*B_m) <= 0 for all m >= 2",
        values=c2, ms=m_all[1:], passes=c2 <= tol2, worst_is_min=False)

    sig = mesh.sigma[2:]
    tol_s = 1e-14 * np.maximum(1.0, np.abs(sig))
    sigma_monotone = bool(np.all(sig >= -tol_s)
                          and np.all(np.diff(sig) <= tol_s[1:]))
    j_from = max(2, K + 1)
    sigma_admissible = bool(np.all(mesh.sigma[j_from:] <= sb + 1e-14)) if j_from <= M else True
    betas_in_unit = bool(np.all((betas[1:] > 0.0) & (betas[1:] < 1.0)))

    # recorded ratio bound, m >= 3: beta_m B_m / (A_m - beta_m B_m) <= theta/(2-theta)
    ratio_ok = True
    if M >= 3 and np.all(c1[2:] > 0):
        ratios = betas[3:] * diags.B[3:] / c1[2:]
        ratio_ok = bool(np.all(ratios <= theta / (2.0 - theta) + 1e-12))
    elif M >= 3:
        ratio_ok = False

    inverse_checked = False
    inverse_min: float | None = None
    if verify_inverse:
        op = OperatorMatrix.assemble(mesh, alpha, variant=variant, K=K)
        _, inverse_min = verify_inverse_nonneg(op, cap=inverse_cap)
        inverse_checked = True

    return MonotoneCertificate(
        alpha=alpha, theta=theta, variant=variant, K=K, M=M,
        sigma_bar=sb, rho_bar=2.0 / (1.0 - sb) - 1.0,
        betas=betas, conditions=(cond1, cond2),
        betas_in_unit=betas_in_unit, sigma_monotone=sigma_monotone,
        sigma_admissible=sigma_admissible, ratio_bound_ok=ratio_ok,
        inverse_checked=inverse_checked, inverse_min_entry=inverse_min,
    )


def _condition_report(name: str, description: str, values: np.ndarray,
                      ms: np.ndarray, passes: np.ndarray, worst_is_min: bool) -> ConditionReport:
    ok = bool(passes.all())
    first = None if ok else int(ms[np.argmin(passes)])
    worst_idx = int(np.argmin(values)) if worst_is_min else int(np.argmax(values))
    return ConditionReport(
        name=name, description=description, passed=ok, n_checked=int(values.size),
        first_violation_m=first, worst_margin=float(values[worst_idx]),
        worst_m=int(ms[worst_idx]),
    )


@dataclass(frozen=True)
class FactorPair:
    """Split of the augmented operator matrix into lower factors A1 @ A2.

    A2 maps U to the damped differences V^j = (U^j - beta_j U^{j-1})/(1-beta_j);
    A1 applies the operator in the damped basis. Row 0 of both is the identity
    row carrying the initial value.
    """

    a1: np.ndarray
    a2: np.ndarray
    betas: np.ndarray

    def product(self) -> np.ndarray:
        return self.a1 @ self.a2

    def sign_report(self, tol: float = 1e-12) -> dict:
        """M-matrix sign pattern of both factors, tolerance tol per row scale."""
        out = {}
        for label, A in (("a1", self.a1), ("a2", self.a2)):
            d = np.diag(A)
            scale = np.abs(A).max(axis=1)
            off = A - np.diag(d)
            out[label] = {
                "diag_positive": bool(np.all(d > 0.0)),
                "offdiag_nonpositive": bool(np.all(off <= tol * scale[:, None])),
                "min_diag": float(d.min()),
                "max_offdiag": float(off.max()),
            }
        return out


def factorize(op: OperatorMatrix, betas: np.ndarray) -> FactorPair:
    """Build the two-factor split from a damping schedule.

    The lower factor's rows follow from the telescoped basis change
    psi_j = kappa_{m,j} + beta_{j+1} psi_{j+1} (downward), scaled by (1-beta_j).
    """
    betas = np.asarray(betas, dtype=float)
    M = op.mesh.M
    if betas.shape != (M + 1,):
        raise ValueError(f"betas must have length M+1={M + 1}, got {betas.shape}")
    if np.any((betas[1:] < 0.0) | (betas[1:] >= 1.0)):
        raise ValueError("betas must lie in [0, 1)")
    hat = op.dense(augmented=True)
    psi = hat.copy()
    for j in range(M - 1, -1, -1):
        psi[:, j] += betas[j + 1] * psi[:, j + 1]
    a1 = psi * (1.0 - betas)[None, :]
    a1[0, :] = 0.0
    a1[0, 0] = 1.0
    a2 = np.zeros_like(hat)
    a2[0, 0] = 1.0
    for j in range(1, M + 1):
        a2[j, j] = 1.0 / (1.0 - betas[j])
        a2[j, j - 1] = -betas[j] / (1.0 - betas[j])
    return FactorPair(a1=a1, a2=a2, betas=betas)


def verify_inverse_nonneg(op_or_matrix, cap: int = 512, tol: float = 1e-12):
    """Brute-force the inverse of the augmented lower-triangular operator.

    Returns (all entries >= -tol, minimum inverse entry). Cost O(M^3); capped.
    """
    if isinstance(op_or_matrix, OperatorMatrix):
        if op_or_matrix.mesh.M > cap:
            raise ValueError(f"M={op_or_matrix.mesh.M} exceeds the brute-force cap {cap}")
        A = op_or_matrix.dense(augmented=True)
    else:
        A = np.asarray(op_or_matrix, dtype=float)
        if A.shape[0] > cap + 1:
            raise ValueError(f"matrix size {A.shape[0]} exceeds the brute-force cap {cap + 1}")
    d = np.diag(A)
    if np.any(d == 0.0):
        raise np.linalg.LinAlgError("singular diagonal in triangular solve")
    inv = scipy.linalg.solve_triangular(A, np.eye(A.shape[0]), lower=True)
    min_entry = float(inv.min())
    return min_entry >= -tol, min_entry


@dataclass(frozen=True)
class EnergyReport:
    """Per-step parabolic energy condition, exact and sufficient forms (m >= K+2)."""

    theta: float
    K: int
    ms: np.ndarray
    exact_lhs: np.ndarray
    exact_rhs: np.ndarray
    sufficient_ratio: np.ndarray   # tilde_t_{m-1}/tilde_t_m
    sufficient_threshold: float    # (theta/(2-theta))^{2/alpha}
    exact_ok: np.ndarray = field(repr=False, default=None)
    sufficient_ok: np.ndarray = field(repr=False, default=None)

    @property
    def all_exact_ok(self) -> bool:
        return bool(np.all(self.exact_ok))

    @property
    def all_sufficient_ok(self) -> bool:
        return bool(np.all(self.sufficient_ok))


def check_energy_condition(mesh: TemporalMesh, alpha: float, theta: float,
                           betas: np.ndarray | None = None, K: int = 1) -> EnergyReport:
    """Check the step condition that makes the damped-basis energy argument close.

    Exact form per m >= K+2, with kappa the lower-factor weights:
        (beta_m/((1-beta_m) |kappa_{m,m-1}|))^2
            <= 1/((1-beta_m) kappa_{m,m}) * 1/((1-beta_{m-1}) kappa_{m-1,m-1})
    and the sufficient mesh-only form (theta/(2-theta))^{2/alpha} <= t~_{m-1}/t~_m.
    """
    _check_theta(theta)
    if betas is None:
        betas = beta_schedule(mesh, alpha, theta, K=K)
    M = mesh.M
    if M < K + 2:
        raise ValueError(f"need M >= K+2 = {K + 2} for the energy condition")
    kern = _RowKernel(mesh, alpha, precision="double")
    variant = "l1_start" if K > 1 else "standard"
    diag = np.full(M + 1, np.nan)
    sub = np.full(M + 1, np.nan)
    for m in range(K + 1, M + 1):
        row = kern.kernel_row(m, variant=variant, K=K).coeffs
        # lower-factor weights from the damped-basis transform
        diag[m] = (1.0 - betas[m]) * row[m]
        sub[m] = (1.0 - betas[m - 1]) * (row[m - 1] + betas[m] * row[m])
    ms = np.arange(K + 2, M + 1)
    lhs = (betas[ms] / ((1.0 - betas[ms]) * np.abs(sub[ms]))) ** 2
    rhs = 1.0 / ((1.0 - betas[ms]) * diag[ms]) / ((1.0 - betas[ms - 1]) * diag[ms - 1])
    tratio = mesh.tilde[ms - 1] / mesh.tilde[ms]
    thresh = (theta / (2.0 - theta)) ** (2.0 / alpha)
    return EnergyReport(
        theta=theta, K=K, ms=ms,
        exact_lhs=lhs, exact_rhs=rhs,
        sufficient_ratio=tratio, sufficient_threshold=thresh,
        exact_ok=lhs <= rhs * (1.0 + 1e-12),
        sufficient_ok=thresh <= tratio + 1e-14,
    )


def _check_theta(theta: float) -> None:
    if not 0.5 <= theta <= 1.0:
        raise ValueError(f"theta must be in [1/2, 1], got {theta}")
