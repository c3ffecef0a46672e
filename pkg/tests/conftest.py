"""Shared oracles and the acceptance summary hook.

The oracles here are written from closed forms and explicit basis-index
loops, independently of ``colliderlab.qcore``.
"""

import itertools
import math

import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []

DEFAULT_ANGLES = (0.0, math.pi / 4, math.pi / 8, -math.pi / 8)


def closed_form_pair(m: int, ta: float, tb: float) -> np.ndarray:
    """P(A, B) when the two wings of Bell_m are measured at angles ta, tb."""
    if m == 0:
        same = math.cos(ta - tb) ** 2 / 2
    elif m == 1:
        same = math.cos(ta + tb) ** 2 / 2
    elif m == 2:
        same = math.sin(ta + tb) ** 2 / 2
    else:
        same = math.sin(ta - tb) ** 2 / 2
    diff = 0.5 - same
    return np.array([[same, diff], [diff, same]])


def oracle_table(m: int, angles=DEFAULT_ANGLES) -> np.ndarray:
    """Joint P(a, b, A, B) with uniformly random settings."""
    a0, a1, b0, b1 = angles
    out = np.zeros((2, 2, 2, 2))
    for a, b in itertools.product((0, 1), repeat=2):
        out[a, b] = 0.25 * closed_form_pair(m, (a0, a1)[a], (b0, b1)[b])
    return out


def oracle_chsh(table: np.ndarray, signs) -> float:
    e = [
        (table[a, b, 0, 0] + table[a, b, 1, 1] - table[a, b, 0, 1] - table[a, b, 1, 0]) / table[a, b].sum()
        for a, b in itertools.product((0, 1), repeat=2)
    ]
    return float(np.dot(signs, e))


def bell_vectors() -> list[np.ndarray]:
    r = 1 / math.sqrt(2)
    return [np.array(v) for v in ([r, 0, 0, r], [r, 0, 0, -r], [0, r, r, 0], [0, r, -r, 0])]


def w_source_by_hand() -> np.ndarray:
    """(|0000> + |0011> + |1100> + |1111>) / 2, big-endian amplitudes."""
    psi = np.zeros(16)
    for bits in ("0000", "0011", "1100", "1111"):
        psi[int(bits, 2)] = 0.5
    return psi


def inner_pair_projection(psi: np.ndarray, m: int) -> np.ndarray:
    """Outer-pair (q0, q3) vector <Bell_m|_{q1 q2} psi, by explicit index loops."""
    bell = bell_vectors()[m]
    out = np.zeros(4)
    for q0, q1, q2, q3 in itertools.product((0, 1), repeat=4):
        idx = q0 * 8 + q1 * 4 + q2 * 2 + q3
        out[q0 * 2 + q3] += bell[q1 * 2 + q2] * psi[idx]
    return out


def record(name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def angles():
    return DEFAULT_ANGLES
