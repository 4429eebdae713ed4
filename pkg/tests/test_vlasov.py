import numpy as np
import pytest

from kvnsim.densities import GaussianDensity
from kvnsim.phase_space import (
    CosinePair,
    DensityField,
    HarmonicPotential,
    PhaseGrid,
    ProblemSpec,
    density_from_function,
)
from kvnsim.vlasov import CFLViolation, VlasovSettings, vlasov_solve, vlasov_step

FREE = ProblemSpec()
STANDARD_GAUSSIAN = GaussianDensity(0.0, 0.0, 1.0, 1.0)


def wide_grid(n):
    return PhaseGrid(-8, 8, -8, 8, n, n)


def test_settings_validation():
    with pytest.raises(ValueError):
        VlasovSettings(dt=0.0)
    with pytest.raises(ValueError):
        VlasovSettings(dt=0.01, interpolation="quintic")
    with pytest.raises(ValueError):
        VlasovSettings(dt=0.01, splitting="lie")


def test_free_streaming_matches_analytic_shift():
    grid = wide_grid(128)
    f0 = density_from_function(grid, STANDARD_GAUSSIAN)
    settings = VlasovSettings(dt=1 / 64)
    snap = vlasov_solve(f0, 1.0, FREE, settings, [1.0])[-1]
    Q, P = grid.meshgrid()
    exact = STANDARD_GAUSSIAN(Q - P, P)
    assert np.max(np.abs(snap.values - exact)) < 1e-3
    assert snap.clip_count == 0


def test_harmonic_isotropic_gaussian_is_stationary():
    grid = wide_grid(128)
    f0 = density_from_function(grid, STANDARD_GAUSSIAN)
    spec = ProblemSpec(external=HarmonicPotential(omega=1.0))
    snap = vlasov_solve(f0, 2 * np.pi, spec, VlasovSettings(dt=0.02), [2 * np.pi])[-1]
    assert np.max(np.abs(snap.values - f0.values)) < 1e-3
    assert snap.clip_count == 0


def test_mass_conservation_per_step():
    grid = wide_grid(96)
    f0 = density_from_function(grid, STANDARD_GAUSSIAN)
    spec = ProblemSpec(external=HarmonicPotential(omega=1.0))
    settings = VlasovSettings(dt=0.02)
    rho = f0
    for _ in range(20):
        new = vlasov_step(rho, spec, settings)
        assert abs(new.mass - rho.mass) / rho.mass < 1e-6
        rho = new


def test_solve_t0_returns_initial():
    grid = wide_grid(32)
    f0 = density_from_function(grid, GaussianDensity(0, 0, 0.8, 0.8), warn=False)
    out = vlasov_solve(f0, 0.0, FREE, VlasovSettings(dt=0.01), [0.0])
    assert len(out) == 1
    assert np.array_equal(out[0].values, f0.values)


def test_free_streaming_snapshots():
    grid = wide_grid(128)
    f0 = density_from_function(grid, STANDARD_GAUSSIAN)
    snaps = vlasov_solve(f0, 1.0, FREE, VlasovSettings(dt=1 / 64), [0.5, 1.0])
    Q, P = grid.meshgrid()
    for t, snap in zip([0.5, 1.0], snaps):
        exact = STANDARD_GAUSSIAN(Q - P * t, P)
        assert np.max(np.abs(snap.values - exact)) < 1e-3
        assert snap.time == pytest.approx(t)


def test_periodic_self_consistent_mass_conservation_1000_steps():
    grid = PhaseGrid(-np.pi, np.pi, -5, 5, 32, 32, periodic_q=True)
    dens = GaussianDensity(0.0, 0.0, 0.7, 0.7)
    f0 = density_from_function(grid, dens, warn=False)
    spec = ProblemSpec(pair=CosinePair(strength=0.1, wavenumber=1.0))
    snap = vlasov_solve(f0, 2.0, spec, VlasovSettings(dt=0.002), [2.0])[-1]
    assert abs(snap.mass - f0.mass) / f0.mass < 1e-6


def test_convergence_refinement_free_streaming():
    def linf_error(n, dt):
        grid = wide_grid(n)
        f0 = density_from_function(grid, STANDARD_GAUSSIAN)
        snap = vlasov_solve(f0, 0.5, FREE, VlasovSettings(dt=dt), [0.5])[-1]
        Q, P = grid.meshgrid()
        return np.max(np.abs(snap.values - STANDARD_GAUSSIAN(Q - 0.5 * P, P)))

    coarse = linf_error(64, 0.025)
    fine = linf_error(128, 0.0125)
    assert coarse / fine >= 3.0


def test_cfl_violation_rejected():
    grid = wide_grid(32)
    f0 = density_from_function(grid, GaussianDensity(0, 0, 0.8, 0.8), warn=False)
    with pytest.raises(CFLViolation):
        vlasov_step(f0, FREE, VlasovSettings(dt=3.0))


def test_refuses_momentum_boundary_mass():
    grid = PhaseGrid(-8, 8, -3, 3, 32, 32)  # p-domain too tight for sigma_p=1
    f0 = density_from_function(grid, STANDARD_GAUSSIAN, warn=False)
    with pytest.raises(ValueError, match="outermost"):
        vlasov_solve(f0, 0.1, FREE, VlasovSettings(dt=0.01), [0.1])


def test_linear_interpolation_is_positivity_safe():
    grid = wide_grid(64)
    f0 = density_from_function(grid, STANDARD_GAUSSIAN)
    settings = VlasovSettings(dt=1 / 32, interpolation="linear")
    snap = vlasov_solve(f0, 1.0, FREE, settings, [1.0])[-1]
    assert snap.values.min() >= 0.0
    assert snap.clip_count == 0
    Q, P = grid.meshgrid()
    # linear interpolation is first order: coarser but still usable
    assert np.max(np.abs(snap.values - STANDARD_GAUSSIAN(Q - P, P))) < 2e-2


def test_negative_undershoot_clipped_and_counted():
    # a cell-scale spike produces visible undershoot under cubic advection
    grid = PhaseGrid(-4, 4, -4, 4, 32, 32)
    values = np.zeros((32, 32))
    values[16, 20] = 1.0
    f0 = DensityField(grid, values)
    settings = VlasovSettings(dt=0.05)
    snap = vlasov_step(f0, FREE, settings)
    assert snap.clip_count > 0
    assert snap.values.min() >= DensityField.NEGATIVE_TOL
    assert abs(snap.mass - f0.mass) / f0.mass < 1e-8
