"""First-order time-dependent perturbation theory for the density.

The zeroth order transports the initial density along the non-interacting
backward characteristics; the first-order correction integrates a source
built from the momentum gradient of the transported density and the pair
force of its spatial marginal:

    rho_0(x, t) = rho_init(Phi_{-t}(x))
    src(q, p, t) = d rho_0/dp (q, p, t) * integral dq' n_0(q', t) grad v(q - q')
    rho_1(x, t) = integral_0^t ds  src(Phi_{s-t}(x), s)

The initial density stays an analytic callable throughout: flows compose
inside function arguments, so no interpolation error enters the quantities
this module exists to cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import FlowSettings, flow_map_points
from .phase_space import (
    DensityField,
    NoPair,
    PhaseGrid,
    PhasePoint,
    ProblemSpec,
    density_from_function,
)
from .vlasov import VlasovSettings, vlasov_solve

__all__ = [
    "PerturbationSettings",
    "AuxGridError",
    "transported_density",
    "transported_density_points",
    "interaction_source",
    "interaction_source_points",
    "first_order_correction",
    "first_order_correction_points",
    "perturbative_density",
    "residual_vs_vlasov",
    "ConvergenceTable",
]


class AuxGridError(ValueError):
    """The auxiliary marginal grid is too coarse or too small."""


@dataclass(frozen=True)
class PerturbationSettings:
    """Quadrature and differencing knobs for the perturbative pipeline.

    ``aux_grid`` hosts the spatial marginal of the transported density at
    intermediate times; it is independent of any solver grid on purpose.
    """

    aux_grid: PhaseGrid
    flow: FlowSettings = field(default_factory=lambda: FlowSettings(dt=1e-3))
    quadrature: str = "gauss-legendre"
    n_s: int = 16
    h_p: float = 1e-4

    def __post_init__(self):
        if self.quadrature not in ("gauss-legendre", "trapezoid"):
            raise ValueError(f"unknown quadrature {self.quadrature!r}")
        if self.n_s < 2:
            raise ValueError("n_s must be >= 2")
        if not self.h_p > 0:
            raise ValueError("h_p must be > 0")


def transported_density_points(points: np.ndarray, t: float, rho_init, spec: ProblemSpec,
                               flow_settings: FlowSettings) -> np.ndarray:
    """Zeroth-order density at an (n, 2) array of points."""
    back = flow_map_points(points, -t, spec, flow_settings)
    back = np.atleast_2d(back)
    return np.asarray(rho_init(back[:, 0], back[:, 1]), dtype=float)


def transported_density(x: PhasePoint, t: float, rho_init, spec: ProblemSpec,
                        flow_settings: FlowSettings) -> float:
    """Initial density evaluated at the backward-flowed point."""
    if t < 0:
        raise ValueError("t must be >= 0")
    pts = np.array([[x.q[0], x.p[0]]])
    return float(transported_density_points(pts, t, rho_init, spec, flow_settings)[0])


def _momentum_gradient(points: np.ndarray, t: float, rho_init, spec, settings) -> np.ndarray:
    h = settings.h_p
    up = points + np.array([0.0, h])
    dn = points - np.array([0.0, h])
    fu = transported_density_points(up, t, rho_init, spec, settings.flow)
    fd = transported_density_points(dn, t, rho_init, spec, settings.flow)
    return (fu - fd) / (2.0 * h)


def _pair_force_integral(t: float, rho_init, spec: ProblemSpec, settings: PerturbationSettings):
    """Return I(q) = sum_k n0(q_k, t) grad v(q - q_k) dq on the aux grid.

    The marginal n0 is built by pushing the analytic initial density backward
    onto the dedicated auxiliary grid (midpoint quadrature in p)."""
    aux = settings.aux_grid
    Qa, Pa = aux.meshgrid()
    pts = np.column_stack([Qa.ravel(), Pa.ravel()])
    vals = transported_density_points(pts, t, rho_init, spec, settings.flow)
    marginal = vals.reshape(aux.n_q, aux.n_p).sum(axis=1) * aux.dp
    mass = marginal.sum() * aux.dq
    ref = getattr(rho_init, "mass", None)
    if ref is not None and abs(mass - ref) > 1e-3 * max(abs(ref), 1e-300):
        raise AuxGridError(
            f"marginal mass {mass:.6g} deviates from the initial mass {ref:.6g} "
            "by more than 1e-3 relative; refine or enlarge the auxiliary grid"
        )
    weighted = marginal * aux.dq
    qa = aux.q_centers

    def integral(q: np.ndarray) -> np.ndarray:
        disp = aux.wrap_displacement(np.asarray(q)[:, None] - qa[None, :])
        return spec.pair.gradient(disp) @ weighted

    return integral


def interaction_source_points(points: np.ndarray, t: float, rho_init, spec: ProblemSpec,
                              settings: PerturbationSettings,
                              pair_integral=None) -> np.ndarray:
    """Source values at an (n, 2) array of points."""
    if isinstance(spec.pair, NoPair):
        return np.zeros(np.atleast_2d(points).shape[0])
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pair_integral is None:
        pair_integral = _pair_force_integral(t, rho_init, spec, settings)
    grad_p = _momentum_gradient(pts, t, rho_init, spec, settings)
    return grad_p * pair_integral(pts[:, 0])


def interaction_source(x: PhasePoint, t: float, rho_init, spec: ProblemSpec,
                       settings: PerturbationSettings) -> float:
    """First-order source at a single phase point."""
    if t < 0:
        raise ValueError("t must be >= 0")
    pts = np.array([[x.q[0], x.p[0]]])
    return float(interaction_source_points(pts, t, rho_init, spec, settings)[0])


def _time_nodes(t: float, settings: PerturbationSettings):
    if settings.quadrature == "gauss-legendre":
        nodes, weights = np.polynomial.legendre.leggauss(settings.n_s)
        return 0.5 * t * (nodes + 1.0), 0.5 * t * weights
    nodes = np.linspace(0.0, t, settings.n_s)
    weights = np.full(settings.n_s, t / (settings.n_s - 1))
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return nodes, weights


def first_order_correction_points(points: np.ndarray, t: float, rho_init, spec: ProblemSpec,
                                  settings: PerturbationSettings) -> np.ndarray:
    """First-order density correction at an (n, 2) array of points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if t == 0.0 or isinstance(spec.pair, NoPair):
        return np.zeros(pts.shape[0])
    nodes, weights = _time_nodes(t, settings)
    out = np.zeros(pts.shape[0])
    for s, w in zip(nodes, weights):
        traced = np.atleast_2d(flow_map_points(pts, s - t, spec, settings.flow))
        pair_integral = _pair_force_integral(s, rho_init, spec, settings)
        out += w * interaction_source_points(traced, s, rho_init, spec, settings,
                                             pair_integral=pair_integral)
    return out


def first_order_correction(x: PhasePoint, t: float, rho_init, spec: ProblemSpec,
                           settings: PerturbationSettings) -> float:
    """Quadrature of the source along the backward characteristic through x."""
    if t < 0:
        raise ValueError("t must be >= 0")
    pts = np.array([[x.q[0], x.p[0]]])
    return float(first_order_correction_points(pts, t, rho_init, spec, settings)[0])


def perturbative_density(grid: PhaseGrid, t: float, rho_init, spec: ProblemSpec,
                         settings: PerturbationSettings) -> DensityField:
    """Zeroth plus first order evaluated at every cell center."""
    if t < 0:
        raise ValueError("t must be >= 0")
    Q, P = grid.meshgrid()
    pts = np.column_stack([Q.ravel(), P.ravel()])
    vals = transported_density_points(pts, t, rho_init, spec, settings.flow)
    vals = vals + first_order_correction_points(pts, t, rho_init, spec, settings)
    return DensityField(grid, vals.reshape(grid.n_q, grid.n_p), time=t)


@dataclass(frozen=True)
class ConvergenceTable:
    """Error-vs-parameter sweep and its fitted log-log slope."""

    parameter: str
    rows: tuple[tuple[float, float], ...]  # (parameter value, error)
    fitted_order: float

    @property
    def ratios(self) -> list[float]:
        """Ratios of consecutive errors in row order (decreasing error expected)."""
        errs = [e for _, e in self.rows]
        return [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]


def _fit_order(params, errors) -> float:
    lp = np.log(np.asarray(params, dtype=float))
    le = np.log(np.asarray(errors, dtype=float))
    slope = np.polyfit(lp, le, 1)[0]
    return float(slope)


def residual_vs_vlasov(t: float, rho_init, spec: ProblemSpec, eps_list,
                       grid: PhaseGrid, settings: PerturbationSettings,
                       vlasov_settings: VlasovSettings) -> ConvergenceTable:
    """L-infinity distance between the perturbative density and the grid
    solver at time t, for each coupling strength.

    For a first-order-accurate expansion the distance shrinks like the
    square of the coupling; the fitted order is the least-squares slope of
    log(error) against log(strength) over the nonzero strengths.  A zero
    strength row, when requested, reports the pure discretization floor
    between the two representations.
    """
    rows = []
    init = density_from_function(grid, rho_init, warn=False)
    for eps in eps_list:
        spec_eps = spec.with_pair_strength(eps)
        pert = perturbative_density(grid, t, rho_init, spec_eps, settings)
        solved = vlasov_solve(init, t, spec_eps, vlasov_settings, snapshot_times=[t])[-1]
        linf = float(np.max(np.abs(pert.values - solved.values)))
        rows.append((float(eps), linf))
    nonzero = [(e, err) for e, err in rows if e > 0]
    order = _fit_order(*zip(*nonzero)) if len(nonzero) >= 2 else float("nan")
    rows.sort(key=lambda r: -r[0])
    return ConvergenceTable(parameter="strength", rows=tuple(rows), fitted_order=order)
