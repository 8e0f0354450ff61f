import pytest

from gse.data import synth_dataset
from gse.models import train_toy


@pytest.fixture(scope="session")
def toy_data():
    return synth_dataset(num_classes=3, per_class=60, M=16, N=16, C=3, seed=0)


@pytest.fixture(scope="session")
def toy_test_data():
    return synth_dataset(num_classes=3, per_class=40, M=16, N=16, C=3, seed=1)


@pytest.fixture(scope="session")
def toy_model(toy_data):
    model, acc = train_toy(toy_data.images, toy_data.labels, "conv", epochs=15, lr=0.05, seed=0)
    assert acc >= 0.9
    return model


TEST_DATA_SPEC = "synth:num_classes=3,per_class=40,M=16,N=16,C=3,seed=1"


@pytest.fixture(scope="session")
def model_file(toy_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "toy.gsem"
    toy_model.save(str(path))
    return str(path)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
