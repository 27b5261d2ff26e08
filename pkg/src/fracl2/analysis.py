"""Truncation oracle, theoretical envelopes, rates and convergence tables.

The envelopes are the closed-form stability and error bounds evaluated on a
concrete mesh; rm probes the consistency error of the assembled operator
against a closed-form fractional derivative; build_table drives the solvers
over an (alpha, r, M) sweep and reports standard error/rate layouts.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .mesh import MeshSpec, TemporalMesh, build_graded
from .operator import _RowKernel
from .util import compensated_dot, config_hash, eval_r_rule

__all__ = [
    "StabilityEnvelope",
    "ErrorEnvelope",
    "TruncationProfile",
    "ConvergenceTable",
    "TableRow",
    "CampaignConfig",
    "PointwiseComparison",
    "truncation_error",
    "envelope_U",
    "envelope_E",
    "observed_rates",
    "build_table",
    "pointwise_comparison",
]

_LOG_CASE_TOL = 1e-12  # |r - (3-alpha)| below this selects the log branch


@dataclass(frozen=True)
class StabilityEnvelope:
    """Pointwise bound tau1 * t_j^{alpha-1} * {1, 1+log(t_j/tau1), (tau1/t_j)^gamma}.

    The three branches cover right-hand sides that decay (gamma > 0), are
    borderline (gamma = 0) or grow (gamma < 0) relative to the initial layer.
    values[0] is NaN; the bound starts at j = 1.
    """

    gamma: float
    tau1: float
    alpha: float
    values: np.ndarray


def envelope_U(mesh: TemporalMesh, alpha: float, gamma: float) -> StabilityEnvelope:
    t = mesh.nodes
    tau1 = float(t[1])
    vals = np.full(mesh.M + 1, np.nan)
    tj = t[1:]
    base = tau1 * tj ** (alpha - 1.0)
    if gamma > 0.0:
        vals[1:] = base
    elif gamma == 0.0:
        vals[1:] = base * (1.0 + np.log(tj / tau1))
    else:
        vals[1:] = base * (tau1 / tj) ** gamma
    return StabilityEnvelope(gamma=gamma, tau1=tau1, alpha=alpha, values=vals)


@dataclass(frozen=True)
class ErrorEnvelope:
    """Pointwise error bound E^m with the grading-dependent three-case form.

    r < 3-alpha:  M^{-r} t_m^{alpha-1};
    r = 3-alpha:  M^{alpha-3} t_m^{alpha-1} (1 + log(t_m/t_1));
    r > 3-alpha:  M^{alpha-3} t_m^{alpha-(3-alpha)/r}.
    Equality is decided within 1e-12. values[0] is NaN.
    """

    r: float
    alpha: float
    M: int
    case: str  # "below", "log" or "above"
    values: np.ndarray


def envelope_E(mesh: TemporalMesh, alpha: float, r: float, M: int | None = None) -> ErrorEnvelope:
    if r < 1.0:
        raise ValueError(f"r must be >= 1, got {r}")
    M = mesh.M if M is None else int(M)
    t = mesh.nodes
    vals = np.full(mesh.M + 1, np.nan)
    tm = t[1:]
    gap = r - (3.0 - alpha)
    if abs(gap) <= _LOG_CASE_TOL:
        case = "log"
        vals[1:] = M ** (alpha - 3.0) * tm ** (alpha - 1.0) * (1.0 + np.log(tm / t[1]))
    elif gap < 0.0:
        case = "below"
        vals[1:] = M ** (-r) * tm ** (alpha - 1.0)
    else:
        case = "above"
        vals[1:] = M ** (alpha - 3.0) * tm ** (alpha - (3.0 - alpha) / r)
    return ErrorEnvelope(r=r, alpha=alpha, M=M, case=case, values=vals)


@dataclass(frozen=True)
class TruncationProfile:
    """Consistency error r^m of the operator on exact nodal data, with the
    mesh-local smoothness gauges psi^j the bound is phrased in.

    psi[1] mixes the weighted first-derivative sup on (0, t_2) with the scaled
    oscillation of u there; psi[j] for 2 <= j <= M-1 is t_j^{3-alpha} times the
    third-derivative sup on (t_{j-1}, t_{j+1}). Entries without a defined
    gauge (index 0, index M) are NaN, as are derivative-based entries when no
    derivative callable is supplied.
    """

    alpha: float
    rm: np.ndarray
    psi: np.ndarray

    @property
    def max_abs_rm(self) -> float:
        return float(np.nanmax(np.abs(self.rm)))


def truncation_error(u: Callable, dalpha_u: Callable, mesh: TemporalMesh, alpha: float,
                     du: Callable | None = None, d3u: Callable | None = None,
                     precision: str = "extended") -> TruncationProfile:
    """r^m = (assembled operator applied to exact nodal values) - D_t^alpha u(t_m).

    u and dalpha_u must accept numpy arrays. du/d3u, when given, feed the
    psi gauges; the oscillation part of psi^1 is always sampled on a
    1024-point refinement of [0, t_2].
    """
    kern = _RowKernel(mesh, alpha, precision=precision)
    t = mesh.nodes.astype(kern.out_dtype)
    M = mesh.M
    uvals = np.asarray(u(t), dtype=kern.out_dtype)
    target = np.asarray(dalpha_u(mesh.nodes), dtype=float)
    rm = np.full(M + 1, np.nan)
    for m in range(1, M + 1):
        row = kern.kernel_row(m).coeffs
        rm[m] = float(compensated_dot(row, uvals[: m + 1])) - target[m]

    psi = np.full(M + 1, np.nan)
    s = np.linspace(0.0, float(mesh.nodes[min(2, M)]), 1025)[1:]
    osc = float(np.max(u(s)) - np.min(u(s)))
    t2 = float(mesh.nodes[min(2, M)])
    if du is not None:
        w1 = float(np.max(s ** (1.0 - alpha) * np.abs(du(s))))
        psi[1] = w1 + t2 ** (-alpha) * osc
    else:
        psi[1] = t2 ** (-alpha) * osc
    if d3u is not None:
        for j in range(2, M):
            lo, hi = mesh.nodes[j - 1], mesh.nodes[j + 1]
            ss = np.linspace(lo, hi, 65)
            psi[j] = float(mesh.nodes[j] ** (3.0 - alpha) * np.max(np.abs(d3u(ss))))
    return TruncationProfile(alpha=alpha, rm=rm, psi=psi)


def observed_rates(errors: Sequence[float], Ms: Sequence[int]) -> np.ndarray:
    """rate_i = log(e_i/e_{i+1}) / log(M_{i+1}/M_i) for consecutive entries."""
    e = np.asarray(errors, dtype=float)
    m = np.asarray(Ms, dtype=float)
    if e.shape != m.shape or e.size < 2:
        raise ValueError("errors and Ms must have equal length >= 2")
    if np.any(e <= 0.0):
        raise ValueError("errors must be positive to take rates")
    if np.any(m[1:] <= m[:-1]):
        raise ValueError("Ms must be increasing")
    return np.log(e[:-1] / e[1:]) / np.log(m[1:] / m[:-1])


@dataclass(frozen=True)
class CampaignConfig:
    """Plain-data sweep description; everything needed to rebuild each cell.

    r_rules are strings evaluated per alpha (arithmetic in 'alpha' only), so
    one config covers alpha-dependent gradings like "(3-alpha)/alpha".
    """

    problem: str
    alphas: tuple
    r_rules: tuple
    Ms: tuple
    T: float = 1.0
    metric: str = "at-final-time"   # at-final-time | max-nodal | l2-at-final
    mesh_variant: str = "graded"
    operator_variant: str = "standard"
    K: int = 1
    auto_K: bool = False
    theta: float = 1.0
    N: int = 64
    precision: str = "extended"
    threads: int = 1

    _METRICS = ("at-final-time", "max-nodal", "l2-at-final")

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "r_rules", tuple(str(r) for r in self.r_rules))
        object.__setattr__(self, "Ms", tuple(int(M) for M in self.Ms))
        if self.metric not in self._METRICS:
            raise ValueError(f"metric must be one of {self._METRICS}, got {self.metric!r}")
        for a in self.alphas:
            if not 0.0 < a < 1.0:
                raise ValueError(f"alpha must be in (0,1), got {a}")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        return cls(**d)

    @property
    def digest(self) -> str:
        return config_hash(self.to_dict())


@dataclass
class TableRow:
    alpha: float
    r_rule: str
    r_value: float
    Ms: tuple
    errors: list
    statuses: list

    @property
    def rates(self) -> list:
        out = [None]
        for i in range(1, len(self.Ms)):
            a, b = self.errors[i - 1], self.errors[i]
            if a is None or b is None or a <= 0 or b <= 0:
                out.append(None)
            else:
                out.append(float(np.log(a / b) / np.log(self.Ms[i] / self.Ms[i - 1])))
        return out


@dataclass
class ConvergenceTable:
    config: CampaignConfig
    rows: list

    def to_csv(self) -> str:
        lines = ["alpha,r_rule,r,M,error,rate,status"]
        for row in self.rows:
            rates = row.rates
            for i, M in enumerate(row.Ms):
                err = "" if row.errors[i] is None else repr(row.errors[i])
                rate = "" if rates[i] is None else repr(rates[i])
                lines.append(f"{row.alpha!r},{row.r_rule},{row.r_value!r},{M},"
                             f"{err},{rate},{row.statuses[i]}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        cfg = self.config
        out = [f"problem={cfg.problem} metric={cfg.metric} mesh={cfg.mesh_variant} "
               f"variant={cfg.operator_variant} T={cfg.T}"]
        for row in self.rows:
            out.append(f"alpha={row.alpha:g}  r={row.r_value:.6g}  (rule: {row.r_rule})")
            heads, errs, rates = [], [], []
            for i, M in enumerate(row.Ms):
                heads.append(f"{'M=' + str(M):>11}")
                errs.append(f"{row.errors[i]:>11.3e}" if row.errors[i] is not None
                            else f"{'fail':>11}")
                rv = row.rates[i]
                rates.append(f"{rv:>11.3f}" if rv is not None else f"{'--':>11}")
            out.append("  " + " ".join(heads))
            out.append("  " + " ".join(errs))
            out.append("  " + " ".join(rates))
        return "\n".join(out) + "\n"

    def to_json(self) -> str:
        payload = {
            "config": self.config.to_dict(),
            "config_hash": self.config.digest,
            "rows": [
                {
                    "alpha": row.alpha,
                    "r_rule": row.r_rule,
                    "r": row.r_value,
                    "Ms": list(row.Ms),
                    "errors": row.errors,
                    "rates": row.rates,
                    "statuses": row.statuses,
                }
                for row in self.rows
            ],
        }
        return json.dumps(payload, indent=2)


def _run_cell(payload: tuple) -> dict:
    """One sweep cell; returns plain data so it can cross process boundaries."""
    (problem, alpha, r_value, M, T, metric, mesh_variant,
     operator_variant, K, N, precision) = payload
    from .solve import parabolic_preset, scalar_preset, solve_parabolic_1d, solve_scalar
    try:
        mvariant = "uniform" if (mesh_variant == "graded" and r_value == 1.0) else mesh_variant
        spec = MeshSpec(T=T, M=M, r=r_value, variant=mvariant,
                        K=K if mvariant == "modified_graded" else 1)
        mesh = build_graded(spec)
        if problem in ("talpha", "quad", "zero"):
            res = solve_scalar(scalar_preset(problem, alpha, T=T), mesh,
                               variant=operator_variant, K=K, precision=precision)
        elif problem in ("sinx",):
            res = solve_parabolic_1d(parabolic_preset(problem, alpha, T=T, N=N), mesh,
                                     variant=operator_variant, K=K)
        else:
            return {"status": f"failed: unknown problem {problem!r}", "error": None}
        if metric == "at-final-time":
            val = float(res.errors[-1]) if res.U.ndim == 1 else float(res.errors_max[-1])
        elif metric == "max-nodal":
            val = float(res.errors_max[1:].max())
        else:
            if res.U.ndim == 1:
                return {"status": "failed: l2-at-final needs a parabolic problem",
                        "error": None}
            val = float(res.errors[-1])
        return {"status": "ok", "error": val}
    except Exception as exc:
        return {"status": f"failed: {exc}", "error": None}


def build_table(config: CampaignConfig, threads: int | None = None) -> ConvergenceTable:
    """Run the sweep and assemble the table; cells are independent runs.

    threads <= 1 runs serially in-process; more run in a process pool. The
    cell outputs are keyed by position, so the two paths order identically.
    """
    threads = config.threads if threads is None else threads
    from .monotone import compute_K, sigma_bar

    jobs = []
    index = []
    for alpha in config.alphas:
        for rule in config.r_rules:
            r_value = eval_r_rule(rule, alpha)
            if r_value < 1.0:
                raise ValueError(f"rule {rule!r} gives r={r_value} < 1 at alpha={alpha}")
            K = config.K
            if config.auto_K:
                K = compute_K(r_value, sigma_bar(alpha, config.theta))
            for M in config.Ms:
                jobs.append((config.problem, alpha, r_value, M, config.T,
                             config.metric, config.mesh_variant,
                             config.operator_variant, K, config.N, config.precision))
                index.append((alpha, rule, r_value, M))

    if threads <= 1:
        outputs = [_run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outputs = list(ex.map(_run_cell, jobs))

    rows: dict[tuple, TableRow] = {}
    for (alpha, rule, r_value, M), out in zip(index, outputs):
        key = (alpha, rule)
        if key not in rows:
            rows[key] = TableRow(alpha=alpha, r_rule=rule, r_value=r_value,
                                 Ms=config.Ms, errors=[], statuses=[])
        rows[key].errors.append(out["error"])
        rows[key].statuses.append(out["status"])
    return ConvergenceTable(config=config, rows=list(rows.values()))


@dataclass(frozen=True)
class PointwiseComparison:
    """Per-step series (t_m, |e^m|, E^m, ratio) for export and envelope checks."""

    t: np.ndarray
    abs_error: np.ndarray
    envelope: np.ndarray
    ratio: np.ndarray

    def stats(self, skip: int = 0) -> dict:
        """Max and median of the ratio series, ignoring the first `skip` steps."""
        r = self.ratio[skip:]
        r = r[np.isfinite(r)]
        return {"max": float(np.max(r)), "median": float(np.median(r))}

    def to_csv(self) -> str:
        lines = ["t,abs_error,envelope,ratio"]
        for i in range(self.t.size):
            lines.append(f"{float(self.t[i])!r},{float(self.abs_error[i])!r},"
                         f"{float(self.envelope[i])!r},{float(self.ratio[i])!r}")
        return "\n".join(lines) + "\n"


def pointwise_comparison(result, envelope: ErrorEnvelope) -> PointwiseComparison:
    if result.errors is None:
        raise ValueError("result has no error series; an exact solution is required")
    e = np.asarray(result.errors[1:], dtype=float)
    E = envelope.values[1:]
    return PointwiseComparison(
        t=result.mesh.nodes[1:].copy(),
        abs_error=e,
        envelope=E.copy(),
        ratio=e / E,
    )
