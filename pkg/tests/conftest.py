import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from mera.params import ParameterStore, glorot_uniform


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_mlp_params(
    in_dim: int,
    hidden: int,
    out_dim: int,
    prefix: str,
    rng: np.random.Generator,
    store: ParameterStore | None = None,
) -> ParameterStore:
    store = ParameterStore() if store is None else store
    store.add(f"{prefix}.W1", glorot_uniform(in_dim, hidden, rng))
    store.add(f"{prefix}.b1", rng.standard_normal((1, hidden)) * 0.1)
    store.add(f"{prefix}.W2", glorot_uniform(hidden, out_dim, rng))
    store.add(f"{prefix}.b2", rng.standard_normal((1, out_dim)) * 0.1)
    return store
