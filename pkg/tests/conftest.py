import sys
from pathlib import Path

import pytest

from oneshot_seg import _kernels_numpy
from oneshot_seg._backend import HAVE_NUMBA

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_COCO = ROOT / "data" / "instances_val2017.json"


def pytest_addoption(parser):
    parser.addoption(
        "--coco-annotations",
        default=str(DEFAULT_COCO),
        help="COCO val2017 instances JSON for the random-baseline reproduction",
    )


@pytest.fixture(scope="session")
def coco_path(request):
    return Path(request.config.getoption("--coco-annotations"))


def _backends():
    out = [pytest.param(_kernels_numpy, id="numpy")]
    if HAVE_NUMBA:
        from oneshot_seg import _kernels_numba

        out.append(pytest.param(_kernels_numba, id="numba"))
    return out


@pytest.fixture(scope="session", params=_backends())
def kern(request):
    return request.param


@pytest.fixture(scope="session")
def synth_coco():
    from oneshot_seg.coco_data import parse_dataset
    from oneshot_seg.synthetic import synthetic_coco

    return parse_dataset(synthetic_coco(60, seed=7))


@pytest.fixture(scope="session", params=["numpy", "numba"] if HAVE_NUMBA else ["numpy"])
def backend(request):
    """Route the public API through one kernel backend."""
    from oneshot_seg import _backend

    saved = _backend.USE_NUMBA
    _backend.USE_NUMBA = request.param == "numba"
    yield request.param
    _backend.USE_NUMBA = saved


ACCEPTANCE = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(n, ok, detail):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
