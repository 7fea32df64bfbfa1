"""Port numbering, partition handling and the dense forward solution."""

import numpy as np
import pytest

from conftest import random_scattering
from simnet import CellModel, SimTopology, TuningState, assemble_gamma
from simnet.errors import SolverFailureError
from simnet.netcore import (PartitionedScattering, cell_port_indices,
                            end_to_end_channel, forward_residuals,
                            lu_factor_checked, solve_forward)


def test_topology_counts():
    t = SimTopology(layers=5, cells_per_layer=64)
    assert t.total_cells == 320
    assert t.total_ports == 640
    with pytest.raises(ValueError):
        SimTopology(layers=0, cells_per_layer=4)


def test_port_pair_examples():
    t = SimTopology(layers=5, cells_per_layer=4)
    assert cell_port_indices(t, 1, 1) == (1, 5)
    assert cell_port_indices(t, 2, 3) == (11, 15)
    big = SimTopology(layers=5, cells_per_layer=64)
    assert cell_port_indices(big, 5, 64) == (576, 640)


def test_port_pairs_match_public_numbering():
    for layers, k in [(1, 1), (2, 3), (4, 5)]:
        t = SimTopology(layers, k)
        pairs = t.port_pairs
        assert pairs.shape == (t.total_cells, 2)
        for q in range(1, layers + 1):
            for kk in range(1, k + 1):
                m, n = cell_port_indices(t, q, kk)
                p = k * (q - 1) + kk - 1
                assert tuple(pairs[p] + 1) == (m, n)
    with pytest.raises(IndexError):
        cell_port_indices(SimTopology(2, 3), 3, 1)
    with pytest.raises(IndexError):
        cell_port_indices(SimTopology(2, 3), 1, 4)


def test_partition_round_trip():
    rng = np.random.default_rng(0)
    s = random_scattering(rng, 2, 8, 3)
    full = s.assemble()
    again = PartitionedScattering.from_full(full, 2, 8, 3)
    assert np.array_equal(again.assemble(), full)
    assert s.n_source == 2 and s.n_internal == 8 and s.n_output == 3
    assert s.is_reciprocal()
    assert s.is_passive()
    swapped = s.swap_roles()
    assert swapped.n_source == 3 and swapped.n_output == 2
    assert np.array_equal(swapped.s_rt, s.s_tr)
    with pytest.raises(ValueError):
        PartitionedScattering.from_full(full, 2, 8, 4)


def test_solve_forward_matches_dense_formula():
    for seed in range(8):
        rng = np.random.default_rng(seed)
        topo = SimTopology(layers=int(rng.integers(1, 4)),
                           cells_per_layer=int(rng.integers(1, 5)))
        n = topo.total_ports
        s = random_scattering(rng, 3, n, 2)
        state = TuningState(phases=rng.uniform(-np.pi, np.pi,
                                               topo.total_cells))
        gamma = assemble_gamma(topo, CellModel(), state)
        # reference: h = s_rt + s_re (gamma^-1 - s_ee)^-1 s_et
        core = np.linalg.inv(gamma) - s.s_ee
        h_ref = s.s_rt + s.s_re @ np.linalg.solve(core, s.s_et)
        h = end_to_end_channel(s, topo, gamma)
        np.testing.assert_allclose(h, h_ref, rtol=0, atol=1e-12)
        batch = solve_forward(s, gamma, np.eye(3, dtype=complex))
        np.testing.assert_allclose(batch.y, h_ref, rtol=0, atol=1e-12)
        r1, r2 = forward_residuals(s, gamma, batch)
        assert r1 < 1e-12 and r2 < 1e-12


def test_solve_forward_single_column():
    rng = np.random.default_rng(3)
    topo = SimTopology(2, 2)
    s = random_scattering(rng, 2, topo.total_ports, 2)
    gamma = assemble_gamma(topo, CellModel(),
                           TuningState(phases=np.zeros(topo.total_cells)))
    a_s = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    batch = solve_forward(s, gamma, a_s)
    assert batch.y.ndim == 1
    both = solve_forward(s, gamma, np.stack([a_s, a_s], axis=1))
    np.testing.assert_allclose(both.y[:, 0], batch.y, atol=1e-14)
    with pytest.raises(ValueError):
        solve_forward(s, gamma, np.zeros(5))


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_condition_cap_guard():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    lu_factor_checked(a)  # fine
    near_singular = a.copy()
    near_singular[5] = a[4] * (1.0 + 1e-15)
    with pytest.raises(SolverFailureError) as info:
        lu_factor_checked(near_singular, cond_cap=1e12)
    assert info.value.condition_estimate is None \
        or info.value.condition_estimate > 1e12
    with pytest.raises(SolverFailureError):
        lu_factor_checked(np.zeros((4, 4)))
