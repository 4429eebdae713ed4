import numpy as np
import pytest
from kvnsim.densities import GaussianDensity
from kvnsim.fileio import (
    RunManifest,
    read_field,
    read_fock_operator,
    read_fock_state,
    read_points_csv,
    sha256_of,
    write_field,
    write_fock_operator,
    write_fock_state,
    write_points_csv,
    write_table_csv,
)
from kvnsim.fock import FockBasis, FockState, assemble_liouvillian, build_one_body, build_two_body
from kvnsim.perturbation import ConvergenceTable
from kvnsim.phase_space import (
    GaussianPair,
    HarmonicPotential,
    PhaseGrid,
    ProblemSpec,
    density_from_function,
)


def test_field_round_trip_and_header_size(tmp_path):
    grid = PhaseGrid(-3, 3, -2, 2, 16, 8, periodic_q=True)
    field = density_from_function(grid, GaussianDensity(0, 0, 0.5, 0.4), warn=False)
    field.time = 0.75
    path = tmp_path / "field.kvnf"
    write_field(path, field)
    raw = path.read_bytes()
    assert raw[:4] == b"KVNF"
    assert len(raw) == 64 + 16 * 8 * 8  # fixed header plus row-major float64 payload

    back = read_field(path)
    assert back.grid == grid
    assert back.time == 0.75
    assert np.array_equal(back.values, field.values)


def test_field_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk.kvnf"
    path.write_bytes(b"\x00" * 128)
    with pytest.raises(ValueError, match="density-field"):
        read_field(path)


def test_fock_state_round_trip(tmp_path):
    grid = PhaseGrid(-np.pi, np.pi, -np.pi, np.pi, 4, 4, periodic_q=True, periodic_p=True)
    basis = FockBasis(n_modes=16, n_particles=2)
    rng = np.random.default_rng(0)
    amp = rng.normal(size=basis.dimension) + 1j * rng.normal(size=basis.dimension)
    state = FockState(basis, amp)
    path = tmp_path / "state.kvnq"
    write_fock_state(path, state, grid)
    back, back_grid = read_fock_state(path)
    assert back.basis.n_particles == 2 and back.basis.n_modes == 16
    assert back_grid == grid
    assert np.array_equal(back.amplitudes, amp)


def test_fock_operator_round_trip(tmp_path):
    grid = PhaseGrid(-np.pi, np.pi, -np.pi, np.pi, 4, 4, periodic_q=True, periodic_p=True)
    spec = ProblemSpec(external=HarmonicPotential(omega=1.0),
                       pair=GaussianPair(strength=0.2, width=0.9))
    basis = FockBasis(n_modes=16, n_particles=2)
    op = assemble_liouvillian(build_one_body(grid, spec), build_two_body(grid, spec), basis)
    path = tmp_path / "op.kvno"
    write_fock_operator(path, op, grid)
    back, _ = read_fock_operator(path)
    assert back.hermitian
    assert np.abs((back.matrix - op.matrix).toarray()).max() == 0.0


def test_points_csv_round_trip(tmp_path):
    pts = np.array([[0.1, -0.2], [1.5, 2.5], [-3.25, 0.0]])
    path = tmp_path / "points.csv"
    write_points_csv(path, pts)
    back = read_points_csv(path)
    assert np.array_equal(back, pts)
    with pytest.raises(ValueError, match="columns"):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        read_points_csv(bad)


def test_table_csv_footer(tmp_path):
    table = ConvergenceTable(parameter="strength",
                            rows=((0.2, 1e-3), (0.1, 2.5e-4)), fitted_order=2.0)
    path = tmp_path / "residual_table.csv"
    write_table_csv(path, table)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "strength,linf_error"
    assert lines[-1].startswith("fitted_order,")
    assert float(lines[-1].split(",")[1]) == 2.0


def test_manifest_round_trip_and_checksums(tmp_path):
    art = tmp_path / "data.csv"
    art.write_text("q,p\n0.0,1.0\n")
    manifest = RunManifest(config_sha256="abc", tool_version="0.1.0", wall_time_s=1.5,
                           seeds=[3])
    manifest.add_file(tmp_path, art)
    manifest.write(tmp_path)
    back = RunManifest.load(tmp_path)
    assert back.config_sha256 == "abc"
    assert back.seeds == [3]
    assert back.files[0]["path"] == "data.csv"
    assert back.files[0]["sha256"] == sha256_of(art)
