import numpy as np
import pytest

from silpose.benchmark import SyntheticModelSpec, generate_sequence, make_model


@pytest.fixture(scope="session")
def default_model():
    return make_model()


@pytest.fixture(scope="session")
def small_model():
    # one short chain, two cameras, small images: cheap enough for per-test solves
    spec = SyntheticModelSpec(
        chains=1, bones_per_chain=2, cameras=2, image_size=(96, 96), focal=200.0, segments=10, cap_rings=3
    )
    return make_model(spec)


@pytest.fixture(scope="session")
def three_chain_model():
    return make_model(SyntheticModelSpec(chains=3, segments=10, cap_rings=3))


@pytest.fixture(scope="session")
def default_sequence(default_model):
    return generate_sequence(default_model, seed=0, frames=200)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion and print it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
