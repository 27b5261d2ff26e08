"""Assembly of the order-(3-alpha) discrete Caputo derivative.

The operator acts on nodal values U^0..U^M of a temporal mesh as

    delta^alpha U^m = (1/Gamma(1-alpha)) * int_0^{t_m} (t_m-s)^{-alpha} (P_m U)'(s) ds,

where P_m interpolates U piecewise: linearly on (0, t_1) when m = 1, and for
m >= 2 quadratically through {t_{j-1}, t_j, t_{j+1}} on each (t_{j-1}, t_j) with
j < m, the final interval (t_{m-1}, t_m) reusing the quadratic through
{t_{m-2}, t_{m-1}, t_m}. The "l1_start" variant replaces rows m <= K by
all-linear interpolation (the classical first-order operator), which keeps the
operator inverse-monotone on meshes whose first steps grow too fast.

Every integral reduces to the two kernel moments

    I0 = int u^{-alpha} du,     M1 = int u^{-alpha} (u - u_r) du

over u = t_m - s in (u_r, u_l), because the interpolant derivative on an
interval is linear in u and is expanded here around the near endpoint u_r.
Expanding around u_r instead of combining raw moments is what keeps the far
coefficients fully accurate: the naive (linear term)*I0 - 2*I1 combination
loses a factor ~ (interval width)/(distance to t_m) of relative precision,
which at M = 2^15 would destroy the tabulated digits. I0 is computed by a
uniformly stable expm1/log1p power difference; M1 by a closed form when the
relative width w/u_r >= 0.1 and by a truncated binomial series otherwise
(both branches keep relative error at a few ulps in either precision).

Precision modes: "double" assembles everything in float64; "extended"
assembles the trailing `_TAIL_EXTENDED` intervals of each row (the dominant,
near-singular ones) in 80-bit long double and accumulates rows in long double.
On meshes with nondecreasing steps the remaining float64 intervals satisfy
w/u_r <= 1/(m-j), so their coefficients carry only ~1e-15 relative error with
O(1) aggregate weight; "extended" is what the convergence tables use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import TemporalMesh
from .util import compensated_dot

__all__ = [
    "KernelRow",
    "OperatorMatrix",
    "StencilDiagnostics",
    "kernel_moments",
    "assemble_row",
    "apply",
    "stencil_diagnostics",
    "dump_rows_csv",
]

# rows are materialized only up to this M; solvers stream rows instead
MATERIALIZE_CAP = 4096

# number of trailing intervals per row assembled in long double in extended mode
_TAIL_EXTENDED = 128

# switch between closed-form and series evaluation of M1 at w/u_r = 0.1
_SERIES_SWITCH = 0.1
_SERIES_TERMS = 22
_SERIES_TERMS_TINY = 12   # enough when w/u_r < 0.01


@dataclass(frozen=True)
class KernelRow:
    """Row m of the operator: delta^alpha U^m = sum_j coeffs[j] * U^j."""

    m: int
    coeffs: np.ndarray  # length m+1, units time^{-alpha}
    alpha: float
    family: str  # "quadratic" (standard row) or "linear" (l1_start prefix row)


class OperatorMatrix:
    """Materialized lower-triangular operator rows for m = 1..M."""

    def __init__(self, mesh: TemporalMesh, alpha: float, rows: list[KernelRow],
                 variant: str = "standard", K: int = 1):
        self.mesh = mesh
        self.alpha = alpha
        self.rows = rows
        self.variant = variant
        self.K = K

    @classmethod
    def assemble(cls, mesh: TemporalMesh, alpha: float, variant: str = "standard",
                 K: int = 1, precision: str = "double") -> "OperatorMatrix":
        if mesh.M > MATERIALIZE_CAP:
            raise ValueError(
                f"refusing to materialize M={mesh.M} rows (cap {MATERIALIZE_CAP}); "
                "solvers assemble rows on the fly")
        kern = _RowKernel(mesh, alpha, precision=precision)
        rows = [kern.kernel_row(m, variant=variant, K=K) for m in range(1, mesh.M + 1)]
        return cls(mesh, alpha, rows, variant=variant, K=K)

    def row(self, m: int) -> KernelRow:
        if not 1 <= m <= self.mesh.M:
            raise IndexError(f"row index {m} outside 1..{self.mesh.M}")
        return self.rows[m - 1]

    def dense(self, augmented: bool = True) -> np.ndarray:
        """Full lower-triangular matrix; row 0 is the identity row for U^0."""
        M = self.mesh.M
        A = np.zeros((M + 1, M + 1))
        A[0, 0] = 1.0 if augmented else 0.0
        for kr in self.rows:
            A[kr.m, : kr.m + 1] = kr.coeffs
        return A


def kernel_moments(a: float, b: float, t_m: float, alpha: float) -> tuple[float, float, float]:
    """Moments of the kernel against 1, u, u^2 with u = t_m - s, over s in (a, b).

    I_k = int_{t_m-b}^{t_m-a} u^{k-alpha} du = [u^{k+1-alpha}/(k+1-alpha)], each
    power difference evaluated in the uniformly stable expm1/log1p form.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    if not (0.0 <= a < b <= t_m):
        raise ValueError(f"need 0 <= a < b <= t_m, got a={a}, b={b}, t_m={t_m}")
    u_l = t_m - a
    u_r = t_m - b
    out = []
    for k in range(3):
        p = k + 1 - alpha
        if u_r == 0.0:
            out.append(u_l ** p / p)
        else:
            # u_l^p - u_r^p = u_l^p * (1 - exp(p*ln(u_r/u_l))); the width b - a
            # is formed from the original endpoints, never from u_l - u_r.
            diff = u_l ** p * (-math.expm1(p * math.log1p(-(b - a) / u_l)))
            out.append(diff / p)
    return out[0], out[1], out[2]


class _RowKernel:
    """Vectorized per-row assembly against precomputed mesh arrays."""

    def __init__(self, mesh: TemporalMesh, alpha: float, precision: str = "double"):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must be in (0,1), got {alpha}")
        if precision not in ("double", "extended"):
            raise ValueError(f"unknown precision {precision!r}")
        self.mesh = mesh
        self.alpha = alpha
        self.precision = precision
        self.gamma1ma = math.gamma(1.0 - alpha)
        self._arrays = {}
        dtypes = [np.float64] if precision == "double" else [np.float64, np.longdouble]
        for dt in dtypes:
            t = mesh.nodes.astype(dt)
            tau = np.empty(mesh.M + 1, dtype=dt)
            tau[0] = np.nan
            tau[1:] = t[1:] - t[:-1]
            self._arrays[dt] = (t, tau)
        # binomial series for M1: sum_k d_k eps^k, d_k = C(-alpha, k)/(k+2)
        d = np.empty(_SERIES_TERMS, dtype=np.longdouble)
        c = np.longdouble(1.0)
        al = np.longdouble(alpha)
        for k in range(_SERIES_TERMS):
            d[k] = c / np.longdouble(k + 2)
            c = c * (-(al + k)) / np.longdouble(k + 1)
        self._series = {np.longdouble: d, np.float64: d.astype(np.float64)}

    @property
    def out_dtype(self):
        return np.longdouble if self.precision == "extended" else np.float64

    def _moments(self, u_l: np.ndarray, u_r: np.ndarray, w: np.ndarray,
                 dt) -> tuple[np.ndarray, np.ndarray]:
        """I0 and M1 over (u_r, u_l) elementwise; requires u_r > 0.

        w is the exact interval width (a mesh step). It must be supplied, not
        recomputed as u_l - u_r: when t_j is below the rounding granularity of
        t_m, both endpoints round to the same value and a recomputed width
        collapses to zero while the true contribution stays O(1).
        """
        alpha = dt(self.alpha)
        p1 = dt(1.0) - alpha
        p2 = dt(2.0) - alpha
        L = np.log1p(-(w / u_l))          # ln(u_r/u_l) < 0
        e1 = -np.expm1(p1 * L)            # 1 - (u_r/u_l)^p1
        e2 = -np.expm1(p2 * L)
        ul_p1 = u_l ** p1
        ul_p2 = ul_p1 * u_l
        I0 = ul_p1 * e1 / p1
        M1 = ul_p2 * e2 / p2 - u_r * (ul_p1 * e1 / p1)
        ratio = w / u_r
        small = ratio < _SERIES_SWITCH
        if np.any(small):
            d = self._series[dt]
            rmax = float(ratio[small].max())
            nterms = _SERIES_TERMS_TINY if rmax < 0.01 else _SERIES_TERMS
            rs = np.where(small, ratio, dt(0.0))
            acc = np.full_like(rs, d[nterms - 1])
            for k in range(nterms - 2, -1, -1):
                acc = acc * rs + d[k]
            ur_p2 = ul_p2 * (dt(1.0) - e2)          # u_r^p2 without an extra pow
            M1 = np.where(small, ur_p2 * rs * rs * acc, M1)
        return I0, M1

    def _quad_contribs(self, m: int, jlo: int, jhi: int, dt):
        """A/B/C contributions of intervals (t_{j-1}, t_j), jlo <= j < jhi < m.

        Interval j < m carries the quadratic through {t_{j-1}, t_j, t_{j+1}};
        its derivative, expanded in u = t_m - s around u_r = t_m - t_j, weights
        node j-1 by (-tau_{j+1} I0 - 2 M1), node j by ((tau_{j+1}-tau_j) I0 + 2 M1),
        node j+1 by (tau_j I0 - 2 M1), over the Lagrange denominators.
        """
        t, tau = self._arrays[dt]
        jj = np.arange(jlo, jhi)
        u_l = t[m] - t[jj - 1]
        u_r = t[m] - t[jj]
        I0, M1 = self._moments(u_l, u_r, tau[jj], dt)
        tj = tau[jj]
        tj1 = tau[jj + 1]
        tsum = tj + tj1
        A = (-tj1 * I0 - 2.0 * M1) / (tj * tsum)
        B = ((tj1 - tj) * I0 + 2.0 * M1) / (tj * tj1)
        C = (tj * I0 - 2.0 * M1) / (tsum * tj1)
        return A, B, C

    def _linear_contribs(self, m: int, jlo: int, jhi: int, dt):
        """Linear-interpolant contributions of intervals jlo <= j <= jhi <= m."""
        t, tau = self._arrays[dt]
        jj = np.arange(jlo, jhi + 1)
        u_l = t[m] - t[jj - 1]
        alpha = dt(self.alpha)
        p1 = dt(1.0) - alpha
        if jhi == m:
            u_r = t[m] - t[jj]
            u_r[-1] = dt(0.0)
            I0 = np.empty_like(u_l)
            if jj.size > 1:
                I0[:-1], _ = self._moments(u_l[:-1], u_r[:-1], tau[jj[:-1]], dt)
            I0[-1] = tau[m] ** p1 / p1
        else:
            I0, _ = self._moments(u_l, t[m] - t[jj], tau[jj], dt)
        return I0 / tau[jj]

    def _last_interval(self, m: int, dt):
        """Contributions of (t_{m-1}, t_m) under the quadratic through the last 3 nodes."""
        t, tau = self._arrays[dt]
        alpha = dt(self.alpha)
        p1 = dt(1.0) - alpha
        p2 = dt(2.0) - alpha
        tm = tau[m]
        tm1 = tau[m - 1]
        I0 = tm ** p1 / p1
        M1 = tm ** p2 / p2                     # u_r = 0 on the final interval
        tsum = tm1 + tm
        cA = (tm * I0 - 2.0 * M1) / (tm1 * tsum)
        cB = (2.0 * M1 - tsum * I0) / (tm1 * tm)
        cC = ((tm1 + 2.0 * tm) * I0 - 2.0 * M1) / (tsum * tm)
        return cA, cB, cC

    def kernel_row(self, m: int, variant: str = "standard", K: int = 1) -> KernelRow:
        if variant not in ("standard", "l1_start"):
            raise ValueError(f"unknown operator variant {variant!r}")
        if not 1 <= m <= self.mesh.M:
            raise ValueError(f"row index {m} outside 1..{self.mesh.M}")
        dt_out = self.out_dtype
        row = np.zeros(m + 1, dtype=dt_out)
        linear_row = (m == 1) or (variant == "l1_start" and m <= K)

        if linear_row:
            if self.precision == "extended":
                jsplit = max(1, m - _TAIL_EXTENDED)
                if jsplit > 1:
                    g = self._linear_contribs(m, 1, jsplit - 1, np.float64)
                    row[1:jsplit] += g
                    row[0:jsplit - 1] -= g
                g = self._linear_contribs(m, jsplit, m, np.longdouble)
                row[jsplit:m + 1] += g
                row[jsplit - 1:m] -= g
            else:
                g = self._linear_contribs(m, 1, m, np.float64)
                row[1:] += g
                row[:-1] -= g
            family = "linear"
        else:
            if self.precision == "extended":
                jsplit = max(1, m - _TAIL_EXTENDED)
            else:
                jsplit = 1
            if jsplit > 1:
                A, B, C = self._quad_contribs(m, 1, jsplit, np.float64)
                row[0:jsplit - 1] += A
                row[1:jsplit] += B
                row[2:jsplit + 1] += C
            if jsplit < m:
                dt = np.longdouble if self.precision == "extended" else np.float64
                A, B, C = self._quad_contribs(m, jsplit, m, dt)
                row[jsplit - 1:m - 1] += A
                row[jsplit:m] += B
                row[jsplit + 1:m + 1] += C
            dt = np.longdouble if self.precision == "extended" else np.float64
            cA, cB, cC = self._last_interval(m, dt)
            row[m - 2] += cA
            row[m - 1] += cB
            row[m] += cC
            family = "quadratic"

        row /= dt_out(self.gamma1ma)
        return KernelRow(m=m, coeffs=row, alpha=self.alpha, family=family)

    def far_interval_weight(self, m: int) -> float:
        """Scaled contribution of interval (t_{m-3}, t_{m-2}) to node m-1 (m >= 3).

        This is the quantity the stencil diagnostics report as the far-interval
        correction to the subdiagonal weight; it vanishes structurally at m <= 2.
        """
        if m < 3:
            return 0.0
        dt = np.float64
        A, B, C = self._quad_contribs(m, m - 2, m - 1, dt)
        return float(C[0]) / self.gamma1ma


def assemble_row(mesh: TemporalMesh, alpha: float, m: int, variant: str = "standard",
                 K: int = 1, precision: str = "double") -> KernelRow:
    """Assemble a single operator row (convenience wrapper around the kernel)."""
    return _RowKernel(mesh, alpha, precision=precision).kernel_row(m, variant=variant, K=K)


def apply(op: OperatorMatrix, U, m: int) -> float:
    """Evaluate delta^alpha U^m = sum_{j<=m} kappa_{m,j} U^j for materialized rows."""
    row = op.row(m)
    U = np.asarray(U, dtype=row.coeffs.dtype)
    if U.size < m + 1:
        raise ValueError(f"need U^0..U^{m}, got {U.size} values")
    return float(compensated_dot(row.coeffs, U[: m + 1]))


@dataclass(frozen=True)
class StencilDiagnostics:
    """Scaled stencil weights per row: arrays indexed by m (index 0 unused).

    With s_m = tilde_t_m^alpha * Gamma(1-alpha) * 2^alpha:
      B[m]   =  s_m * kappa_{m,m}            (diagonal weight, m >= 1)
      A[m]   = -s_m * kappa_{m,m-1}          (subdiagonal weight, m >= 1)
      App[m] =  s_m * far-interval part of the subdiagonal (m >= 3; 0 at m <= 2)
      F[m]   =  s_m * (kappa_{m,m-2} + kappa_{m,m-1} + kappa_{m,m})  (m >= 2)

    On any mesh, B[m] = B - sigma_m A'/(2(1+sigma_m)) and
    A[m] + App[m] = A'/(1 - sigma_m^2) for quadratic rows with m >= 2, which is
    the assembly cross-check the tests exercise.
    """

    alpha: float
    B: np.ndarray
    A: np.ndarray
    App: np.ndarray
    F: np.ndarray


def stencil_diagnostics(mesh: TemporalMesh, alpha: float, variant: str = "standard",
                        K: int = 1) -> StencilDiagnostics:
    if mesh.M < 2:
        raise ValueError("diagnostics need M >= 2")
    kern = _RowKernel(mesh, alpha, precision="double")
    M = mesh.M
    scale = mesh.tilde ** alpha * (kern.gamma1ma * 2.0 ** alpha)
    B = np.full(M + 1, np.nan)
    A = np.full(M + 1, np.nan)
    App = np.full(M + 1, np.nan)
    F = np.full(M + 1, np.nan)
    for m in range(1, M + 1):
        row = kern.kernel_row(m, variant=variant, K=K).coeffs
        s = scale[m]
        B[m] = s * row[m]
        A[m] = -s * row[m - 1]
        if m >= 2:
            F[m] = s * (row[m - 2] + row[m - 1] + row[m])
            linear_row = variant == "l1_start" and m <= K
            if not linear_row:
                App[m] = s * kern.far_interval_weight(m)
    return StencilDiagnostics(alpha=alpha, B=B, A=A, App=App, F=F)


def dump_rows_csv(op: OperatorMatrix, path: str | Path, header: str | None = None) -> None:
    """Write rows as `m,j,kappa` lines for external auditing."""
    path = Path(path)
    with path.open("w") as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        fh.write("m,j,kappa\n")
        for kr in op.rows:
            for j, v in enumerate(kr.coeffs):
                fh.write(f"{kr.m},{j},{float(v)!r}\n")
