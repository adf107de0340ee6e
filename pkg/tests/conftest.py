import numpy as np
import pytest

from ionqed.chain import CA40_MASS_AMU, ChainConfig, equilibrium_positions, phonon_spectra

REFERENCE_TRAP = (5.0e6, 5.5e6, 1.0e6)


def reference_chain(N=10):
    return ChainConfig.from_wavelength(N, CA40_MASS_AMU, REFERENCE_TRAP, 729e-9)


@pytest.fixture(scope="session")
def ref_chain():
    return reference_chain()


@pytest.fixture(scope="session")
def ref_spectra(ref_chain):
    return phonon_spectra(ref_chain)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed together at the end of the session
ACCEPTANCE = []


def verdict(label, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
