# core/tests/conftest.py
import pytest

from core import datasets
from core.costs import Calibration
from core.optimizer import enumerate_candidates
from core.serializers import InterfaceSpecSerializer, load
from core.services import default_deployment, gather_stats
from core.tests.test_data import database_of


@pytest.fixture(autouse=True)
def output_dir(settings, tmp_path):
    settings.PVD_OUTPUT_DIR = tmp_path / 'runs'
    return settings.PVD_OUTPUT_DIR


@pytest.fixture
def congress_data():
    return datasets.congress(seed=7, members=12, votes_per_year=2.0)


@pytest.fixture
def congress_spec(congress_data):
    return load(InterfaceSpecSerializer, congress_data.spec)


@pytest.fixture
def congress_db(congress_data, congress_spec):
    return database_of(congress_data, congress_spec)


@pytest.fixture
def congress_stats(congress_db):
    return gather_stats(congress_db)


@pytest.fixture
def deployment():
    return default_deployment()


@pytest.fixture
def calibration():
    return Calibration.from_settings()


@pytest.fixture
def congress_candidates(congress_spec, deployment, congress_stats):
    return enumerate_candidates(congress_spec, deployment, congress_stats)


@pytest.fixture
def dataset_dir(tmp_path):
    """Writes a generated dataset under tmp_path and returns the spec path."""
    def write(name, **options):
        target = tmp_path / name
        return datasets.write_dataset(datasets.generate(name, **options), str(target))
    return write
