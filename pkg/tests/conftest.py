import numpy as np
import pytest

from hlba.lba import NaturalLbaParams

# Ten parameter sets spanning fast/slow, easy/hard and near-degenerate regimes.
PARAM_SETS = [
    NaturalLbaParams(1.0, 0.5, (2.0, 1.0), 0.2),
    NaturalLbaParams(1.3, 0.67, (1.35, 3.06), 0.18),
    NaturalLbaParams(0.8, 0.79, (3.0, 0.5), 0.1),
    NaturalLbaParams(2.5, 0.3, (1.0, 1.2), 0.3),
    NaturalLbaParams(1.5, 1.0, (0.4, 0.6), 0.25),
    NaturalLbaParams(1.0, 0.2, (4.0, 2.5), 0.15),
    NaturalLbaParams(1.2, 0.9, (1.0, 1.0), 0.05),
    NaturalLbaParams(3.0, 2.0, (2.0, 0.2), 0.4),
    NaturalLbaParams(0.6, 0.5, (1.5, 0.8), 0.2, s=(1.0, 0.7)),
    NaturalLbaParams(1.8, 0.4, (0.9, 1.9), 0.35),
]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


class GaussianToyLik:
    """y_ji ~ N(alpha_j, noise^2 I): a likelihood with a closed-form conditional posterior."""

    def __init__(self, y, noise=1.0):
        self.y = [np.atleast_2d(np.asarray(v, dtype=float)) for v in y]
        self.noise = noise

    @property
    def n_subjects(self):
        return len(self.y)

    @property
    def dim(self):
        return self.y[0].shape[1]

    def subject(self, j, alpha):
        alpha = np.atleast_2d(alpha)
        r = self.y[j][None, :, :] - alpha[:, None, :]
        n, d = self.y[j].shape
        return -0.5 * (r**2).sum(axis=(1, 2)) / self.noise**2 - n * d * np.log(np.sqrt(2 * np.pi) * self.noise)

    def total(self, alpha):
        alpha = np.atleast_2d(alpha)
        return np.array([self.subject(j, alpha[j:j + 1])[0] for j in range(self.n_subjects)])


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: dict = {}


def record_acceptance(key: int, ok: bool, text: str, seconds: float) -> None:
    ACCEPTANCE_LINES[key] = f"[{'PASS' if ok else 'FAIL'}] criterion {key:>2}: {text} ({seconds:.1f} s)"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
