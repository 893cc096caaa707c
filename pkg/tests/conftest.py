import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from chainless import kernels

sys.path.insert(0, str(Path(__file__).parent))

# the backend fixture only switches a module global, so sharing it across examples is fine
settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")

BACKENDS = ["python"] + (["cython"] if kernels.compiled_backend is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    before = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(before)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: (int(s.split()[1].rstrip("ab")), s.split()[1])):
        terminalreporter.write_line(line)
