import numpy as np

from conftest import random_measure_pair
from uotmorph.grid import GridDomain, GridMeasure
from uotmorph.solver import (
    AllocationSpec,
    CostSpec,
    QuantizationSpec,
    solve_multiscale,
    solve_unbalanced,
)

COST = CostSpec()
QUANT = QuantizationSpec(units=10**6)


def test_passthrough_below_threshold_is_bit_identical():
    rng = np.random.default_rng(1)
    mu, nu = random_measure_pair(rng, dims=(4, 4))
    alloc = AllocationSpec(lam=2.0)
    exact = solve_unbalanced(mu, nu, COST, alloc, QUANT)
    ms = solve_multiscale(mu, nu, COST, alloc, QUANT, coarsen_threshold=1000)
    assert ms == exact


def test_identity_zero_at_every_scale():
    rng = np.random.default_rng(2)
    dom = GridDomain(dims=(16, 16), spacing=(1.0, 1.0), origin=(0.0, 0.0))
    m = GridMeasure(dom, rng.random((16, 16)) + 0.01)
    for threshold in (10, 50, 1000):
        sol = solve_multiscale(
            m, m, COST, AllocationSpec(lam=5.0), QUANT, coarsen_threshold=threshold
        )
        assert sol.objective == 0.0


def test_multiscale_within_tolerance_of_exact():
    rng = np.random.default_rng(3)
    dom = GridDomain(dims=(16, 16), spacing=(1.0, 1.0), origin=(0.0, 0.0))
    for trial in range(5):
        w = rng.random((16, 16)) * (rng.random((16, 16)) < 0.8)
        z = rng.random((16, 16)) * (rng.random((16, 16)) < 0.8)
        mu, nu = GridMeasure(dom, w), GridMeasure(dom, z)
        alloc = AllocationSpec(lam=30.0)
        exact = solve_unbalanced(mu, nu, COST, alloc, QUANT)
        ms = solve_multiscale(
            mu, nu, COST, alloc, QUANT, coarsen_threshold=40, neighborhood_radius=1
        )
        assert ms.objective >= exact.objective - 1e-9 * max(1.0, exact.objective)
        assert ms.objective <= exact.objective * 1.05


def test_multiscale_radius_widens_admission():
    rng = np.random.default_rng(4)
    dom = GridDomain(dims=(16, 16), spacing=(1.0, 1.0), origin=(0.0, 0.0))
    w = rng.random((16, 16))
    z = rng.random((16, 16))
    mu, nu = GridMeasure(dom, w), GridMeasure(dom, z)
    alloc = AllocationSpec(lam=30.0)
    exact = solve_unbalanced(mu, nu, COST, alloc, QUANT)
    objs = [
        solve_multiscale(
            mu, nu, COST, alloc, QUANT, coarsen_threshold=40, neighborhood_radius=r
        ).objective
        for r in (0, 1, 2)
    ]
    # wider neighborhoods can only improve the restriction
    assert objs[1] <= objs[0] + 1e-9
    assert objs[2] <= objs[1] + 1e-9
    assert objs[2] >= exact.objective - 1e-9 * max(1.0, exact.objective)
