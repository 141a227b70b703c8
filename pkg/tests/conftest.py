import numpy as np
import pytest

from rrae.embeddings import synthetic_table

H = 1e-5
# Elementwise |analytic - numeric| / max(|analytic|, |numeric|, FLOOR): entries
# below FLOOR in magnitude are held to an absolute error of rtol * FLOOR.
FLOOR = 1e-6


def numeric_grad(f, arr, h=H, points=3):
    """Central differences of scalar ``f()`` with respect to ``arr`` (mutated in place).

    ``points=5`` uses the fourth-order stencil
    ``(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h``, which tolerates a
    larger ``h`` and so loses far less to rounding.
    """
    offsets = {3: ((1, 0.5), (-1, -0.5)),
               5: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))}[points]
    g = np.zeros_like(arr, dtype=np.float64)
    for i in range(arr.size):
        old = arr.flat[i]
        acc = 0.0
        for k, w in offsets:
            arr.flat[i] = old + k * h
            acc += w * f()
        arr.flat[i] = old
        g.flat[i] = acc / h
    return g


def rel_error(analytic, numeric, floor=FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def perturb_zeros(blocks, rng, scale=0.1):
    """Give zero-initialised blocks (biases) random values so every path is exercised."""
    for v in blocks.values():
        mask = v == 0
        v[mask] = rng.normal(0, scale, size=int(mask.sum()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_table():
    return synthetic_table(20, 4, seed=3, max_cos=0.9)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record(n: int, title: str, passed: bool, detail: str) -> None:
    """Remember an acceptance outcome; the terminal summary prints one line per criterion."""
    ACCEPTANCE[n] = (title, bool(passed), detail)
    print(f"criterion {n} {'PASS' if passed else 'FAIL'}: {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if passed else 'FAIL'}: {title}: {detail}")
