import pytest

from smallgrasp.classifier.model import train
from smallgrasp.classifier.synthetic import DatasetConfig, build_dataset
from smallgrasp.simworld.presses import PressConfig


@pytest.fixture(scope="session")
def small_classifier():
    """Reference model for classes 3, 12, 17 plus two-object presses; a few seconds to build."""
    cfg = DatasetConfig(classes=(3, 12, 17), presses_per_class=8, press=PressConfig(frames=1),
                        two_object_presses=16, seed=11, keep_tensors=False)
    return train(build_dataset(cfg))


_CRITERIA = {}


def record_criterion(number, ok, detail):
    """Remember one acceptance result; all of them are printed at the end of the run."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
