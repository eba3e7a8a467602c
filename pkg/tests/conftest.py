import numpy as np
import pytest

from uotmorph.grid import GridDomain, GridMeasure


@pytest.fixture
def domain_1d():
    """2-voxel line embedded as a 1x2 2D grid, spacing 1."""
    return GridDomain(dims=(1, 2), spacing=(1.0, 1.0), origin=(0.0, 0.0))


def line_domain(n):
    return GridDomain(dims=(1, n), spacing=(1.0, 1.0), origin=(0.0, 0.0))


def line_measure(values):
    values = np.asarray(values, dtype=np.float64)
    return GridMeasure(line_domain(len(values)), values.reshape(1, -1))


def random_measure_pair(rng, dims=(4, 4), density=0.7, max_support=None):
    """Random non-negative measure pair on a shared domain."""
    dom = GridDomain(dims=dims, spacing=(1.0, 1.0), origin=(0.0, 0.0))
    size = int(np.prod(dims))

    def draw():
        v = rng.random(size) * (rng.random(size) < density)
        if max_support is not None and (v > 0).sum() > max_support:
            keep = rng.choice(np.flatnonzero(v > 0), size=max_support, replace=False)
            mask = np.zeros(size, dtype=bool)
            mask[keep] = True
            v = np.where(mask, v, 0.0)
        return v

    w, z = draw(), draw()
    if w.sum() == 0:
        w[rng.integers(size)] = 1.0
    if z.sum() == 0:
        z[rng.integers(size)] = 1.0
    return GridMeasure(dom, w.reshape(dims)), GridMeasure(dom, z.reshape(dims))
