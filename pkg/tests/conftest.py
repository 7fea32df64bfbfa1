"""Shared random-instance generators for the test suite.

Everything is seeded through explicitly passed numpy Generators so each
test controls its own reproducibility.
"""

import numpy as np

from simnet import PartitionedScattering
from simnet.solvers import BlockTridiagonal, sim_i_mask


def random_scattering(rng, n_source, n_internal, n_output, norm=0.8):
    """Random reciprocal passive network with the given port partition."""
    total = n_source + n_internal + n_output
    raw = rng.standard_normal((total, total)) \
        + 1j * rng.standard_normal((total, total))
    sym = (raw + raw.T) / 2.0
    sym *= norm / np.linalg.norm(sym, 2)
    return PartitionedScattering.from_full(sym, n_source, n_internal,
                                           n_output)


def masked_scattering(rng, topology, n_source, n_output, norm=0.8):
    """Random reciprocal network whose internal coupling is layer-banded."""
    n = topology.total_ports
    parts = random_scattering(rng, n_source, n, n_output, norm=norm)
    full = parts.assemble()
    sl = slice(n_source, n_source + n)
    full[sl, sl] = np.where(sim_i_mask(topology), full[sl, sl], 0)
    return PartitionedScattering.from_full(full, n_source, n, n_output)


def random_block_tridiagonal(rng, n_blocks, block_size, diag_shift=None):
    """Random well-conditioned block-tridiagonal matrix."""
    k = block_size
    shape = (n_blocks, k, k)
    off = (max(n_blocks - 1, 0), k, k)
    diag = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    # shifted diagonal keeps every elimination pivot comfortably regular
    diag += (diag_shift if diag_shift is not None else 2.0 * k + 2.0) \
        * np.eye(k)
    lower = rng.standard_normal(off) + 1j * rng.standard_normal(off)
    upper = rng.standard_normal(off) + 1j * rng.standard_normal(off)
    return BlockTridiagonal(diag=diag, lower=lower, upper=upper)


def random_target(rng, n_output, n_source):
    return rng.standard_normal((n_output, n_source)) \
        + 1j * rng.standard_normal((n_output, n_source))
