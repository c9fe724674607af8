"""Shared fixtures: random operating batches and small synthetic datasets."""

import numpy as np
import pytest

from chokevfm import estimation, hybrid
from chokevfm.pipeline import WellDataset


def random_batch(rng, n=8):
    """Physically plausible explanatory columns for one well."""
    cols = {
        "p1": rng.uniform(8e6, 1.5e7, n),
        "p2": rng.uniform(2e6, 4e6, n),
        "t1": rng.uniform(340.0, 360.0, n),
        "t2": rng.uniform(330.0, 350.0, n),
        "u": rng.uniform(0.2, 0.9, n),
        "eta_g": rng.uniform(0.02, 0.2, n),
        "eta_o": rng.uniform(0.3, 0.7, n),
    }
    cols["eta_w"] = 1.0 - cols["eta_g"] - cols["eta_o"]
    return cols


def make_dataset(n=240, seed=0, noise=0.0, dt_hours=1.0, well_id="test-well"):
    """Dataset whose targets come from the mechanistic model at shifted parameters."""
    rng = np.random.default_rng(seed)
    cols = random_batch(rng, n)
    truth = hybrid.build(
        "MM", estimation.default_physical_priors(), seed=0,
        stats=hybrid.Standardization.from_columns(cols),
    )
    truth.phys["c_d"].set_natural(0.9)
    truth.phys["rho_o"].set_natural(820.0)
    y = np.asarray(truth.predict(cols))
    if noise > 0.0:
        y = y * (1.0 + rng.normal(0.0, noise, size=n))
    columns = dict(cols)
    columns["timestamp"] = np.arange(n, dtype=float) * dt_hours * 3600.0
    columns["q_o"] = y
    columns["q_g"] = np.zeros(n)
    columns["q_w"] = np.zeros(n)
    partition = np.array(["train"] * n, dtype="<U10")
    return WellDataset(well_id, columns, partition)


@pytest.fixture
def priors():
    return estimation.default_physical_priors()
