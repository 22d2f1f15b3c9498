import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rampsupport import load_case  # noqa: E402
from rampsupport.stochastic import load_synth_spec  # noqa: E402


@pytest.fixture(scope="session")
def ieee33():
    return load_case("ieee33-modified")


@pytest.fixture(scope="session")
def ieee33_base():
    return load_case("ieee33-base")


@pytest.fixture(scope="session")
def synth_spec():
    from importlib import resources

    return load_synth_spec(resources.files("rampsupport.data").joinpath("synthetic_slots.json"))


@pytest.fixture(scope="session")
def ishigami_fit():
    """q = 9 expansion of the Ishigami function from 3000 Latin hypercube points."""
    import numpy as np
    from scipy.stats import qmc

    from oracles import ishigami
    from rampsupport import DataDrivenPCE

    x = -np.pi + 2 * np.pi * qmc.LatinHypercube(d=3, seed=2024).random(3000)
    model = DataDrivenPCE(degree=9).fit(x, ishigami(x))
    return model, x
