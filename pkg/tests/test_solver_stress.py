"""Wider randomized cross-checks of the simplex against the SSP oracle:
3D domains, both-sided allocation, near-degenerate lambdas, and the
quantization primitive under hypothesis.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uotmorph.grid import GridDomain, GridMeasure, downsample
from uotmorph.features import smooth
from uotmorph.solver import (
    AllocationSpec,
    CostSpec,
    QuantizationSpec,
    feasibility_violation_units,
    quantize_to_total,
    solve_multiscale,
    solve_unbalanced,
)
from uotmorph.solver import network
from uotmorph.solver.api import _run

COST = CostSpec()
QUANT = QuantizationSpec(units=10**6)


def _random_pair_3d(rng, dims=(3, 3, 3), density=0.6):
    dom = GridDomain(dims=dims, spacing=(1.0, 1.5, 2.0), origin=(0.0, -1.0, 4.0))
    size = int(np.prod(dims))

    def draw():
        v = rng.random(size) * (rng.random(size) < density)
        if v.sum() == 0:
            v[rng.integers(size)] = 1.0
        return v.reshape(dims)

    return GridMeasure(dom, draw()), GridMeasure(dom, draw())


def test_3d_oracle_equivalence():
    rng = np.random.default_rng(55)
    for trial in range(30):
        mu, nu = _random_pair_3d(rng)
        lam = [0.3, 2.0, 40.0][trial % 3]
        prob = network.build_unbalanced_problem(
            mu, nu, COST, AllocationSpec(lam=lam), QUANT
        )
        s1 = _run(prob, "simplex")
        s2 = _run(prob, "ssp")
        assert s1.objective == pytest.approx(s2.objective, rel=1e-9, abs=1e-12)
        assert feasibility_violation_units(s1, mu.flat, nu.flat, QUANT.units) == 0


def test_3d_shift_costs_anisotropic_spacing():
    dom = GridDomain(dims=(2, 2, 2), spacing=(1.0, 2.0, 3.0), origin=(0.0,) * 3)
    w = np.zeros((2, 2, 2))
    w[0, 0, 0] = 1.0
    z = np.zeros((2, 2, 2))
    z[1, 1, 1] = 1.0
    sol = solve_unbalanced(
        GridMeasure(dom, w), GridMeasure(dom, z), COST, AllocationSpec(lam=100.0)
    )
    assert sol.objective == pytest.approx(1.0 + 4.0 + 9.0, rel=1e-12)


def test_both_sides_oracle_equivalence():
    rng = np.random.default_rng(66)
    for trial in range(30):
        dims = (4, 4)
        dom = GridDomain(dims=dims, spacing=(1.0, 1.0), origin=(0.0, 0.0))
        w = rng.random(16) * (rng.random(16) < 0.6)
        z = rng.random(16) * (rng.random(16) < 0.6)
        if w.sum() == 0:
            w[0] = 1.0
        if z.sum() == 0:
            z[5] = 1.0
        mu = GridMeasure(dom, w.reshape(dims))
        nu = GridMeasure(dom, z.reshape(dims))
        alloc = AllocationSpec(lam=[0.2, 1.5, 12.0][trial % 3], side="both_sides")
        prob = network.build_unbalanced_problem(mu, nu, COST, alloc, QUANT)
        s1 = _run(prob, "simplex")
        s2 = _run(prob, "ssp")
        assert s1.objective == pytest.approx(s2.objective, rel=1e-9, abs=1e-12)
        assert feasibility_violation_units(s1, mu.flat, nu.flat, QUANT.units) == 0
        # the tiebreak surcharge keeps target-side virtuals out of the optimum
        assert not s1.alloc_add_tgt and not s1.alloc_remove_tgt


def test_3d_downsample_values():
    dom = GridDomain(dims=(3, 3, 3), spacing=(1.0, 1.0, 1.0), origin=(0.0,) * 3)
    m = GridMeasure(dom, np.ones((3, 3, 3)))
    out = downsample(m, 2)
    assert out.domain.dims == (2, 2, 2)
    # corner block has 8 children, edge blocks 4 or 2, far corner 1
    assert out.values[0, 0, 0] == 8.0
    assert out.values[1, 1, 1] == 1.0
    assert out.total_mass == 27.0


def test_3d_smoothing_preserves_constants():
    f = np.full((5, 6, 7), 2.5)
    assert np.allclose(smooth(f, 1.0, truncation_radius=2), f, atol=1e-12)


def test_3d_multiscale_matches_exact_when_unrestricted():
    rng = np.random.default_rng(77)
    dom = GridDomain(dims=(6, 6, 6), spacing=(1.0, 1.0, 1.0), origin=(0.0,) * 3)
    w = rng.random((6, 6, 6))
    z = rng.random((6, 6, 6))
    mu, nu = GridMeasure(dom, w), GridMeasure(dom, z)
    alloc = AllocationSpec(lam=20.0)
    exact = solve_unbalanced(mu, nu, COST, alloc, QUANT)
    ms = solve_multiscale(
        mu, nu, COST, alloc, QUANT, coarsen_threshold=40, neighborhood_radius=2
    )
    assert ms.objective >= exact.objective - 1e-9 * exact.objective
    assert ms.objective <= exact.objective * 1.05


@given(
    values=st.lists(
        st.floats(min_value=0.0, max_value=100.0, allow_nan=False),
        min_size=1,
        max_size=30,
    ),
    total=st.integers(min_value=0, max_value=10**6),
)
@settings(max_examples=200, deadline=None)
def test_quantize_total_and_per_entry_bounds(values, total):
    v = np.asarray(values)
    out = quantize_to_total(v, total)
    assert out.sum() == (total if v.sum() > 0 else 0)
    assert (out >= 0).all()
    if v.sum() > 0:
        scaled = (v / v.sum()) * total
        assert np.max(np.abs(out - scaled)) < 1.0 + 1e-9
        # zero entries never receive units
        assert not out[v == 0].any()
