import numpy as np
import pytest

from ursam.phantom import PhantomSpec, gen_phantom
from ursam.pipeline import load_dataset_dir

# Seeds are fixed so every run of the suite sees identical data; the
# pipeline itself is deterministic given these.
PHANTOM_SEED = 7
PIPELINE_SEED = 11


@pytest.fixture(scope="session")
def phantom64(tmp_path_factory):
    """The acceptance-scale dataset: 10 cases x 4 organs at 64^3."""
    root = tmp_path_factory.mktemp("phantom64")
    gen_phantom(PhantomSpec(cases=10, organs=4, dims=(64, 64, 64)), PHANTOM_SEED, root)
    return list(load_dataset_dir(root))


@pytest.fixture(scope="session")
def phantom_small(tmp_path_factory):
    """A quick dataset for module-level pipeline tests."""
    root = tmp_path_factory.mktemp("phantom_small")
    gen_phantom(PhantomSpec(cases=2, organs=2, dims=(40, 40, 40)), 3, root)
    return root, list(load_dataset_dir(root))


@pytest.fixture
def announce(capsys):
    """Print a line that survives pytest's output capture."""

    def _announce(line):
        with capsys.disabled():
            print(line)

    return _announce


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
