import numpy as np
import pytest


def random_generator(S, rng, low=-1.0, high=1.0):
    """Generator with log-uniform off-diagonal rates."""
    Q = np.exp(rng.uniform(low, high, size=(S, S)))
    np.fill_diagonal(Q, 0.0)
    Q[np.diag_indices(S)] = -Q.sum(axis=1)
    return Q


def taylor_expm(A, terms=60):
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def record_acceptance(number, name, passed, detail):
    """Store one criterion's outcome for the end-of-run summary."""
    ACCEPTANCE[number] = (name, bool(passed), detail)
    print(f"{'PASS' if passed else 'FAIL'} [{number}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{number}] {name}: {detail}")
