"""Normalised V-statistics and their jackknife and split-sample transforms.

For kernels ``k_1..k_m`` evaluated on a series of length ``T`` the statistic
is ``W = T^(m/2) * prod_j mean(k_j)``.  Each transform has a direct evaluator,
built from its definition, and a closed form in terms of diagonal and
off-diagonal kernel sums.  The two must agree to rounding error; the
``verify`` command checks this on random inputs.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OddLength, UnsupportedOrder

JACKKNIFE_ARRANGEMENTS = ("distinct", "centred", "moment")

# Multiplies one coefficient of every closed form; a negative control for the
# identity suite.  Leave at zero outside tests.
_perturbation = 0.0


@contextlib.contextmanager
def perturbed(eps: float):
    """Temporarily shift one coefficient of each closed form by ``eps``."""
    global _perturbation
    old = _perturbation
    _perturbation = float(eps)
    try:
        yield
    finally:
        _perturbation = old


@dataclass(frozen=True)
class KernelSet:
    """``m`` kernels applied elementwise to a series.

    With ``center=True`` (the default) every kernel is centred on its sample
    mean before use.  Pass ``center=False`` for kernels that already have
    population mean zero.
    """

    kernels: tuple[Callable[[np.ndarray], np.ndarray], ...]
    center: bool = True

    def __post_init__(self):
        if not 1 <= len(self.kernels) <= 6:
            raise ValueError("between 1 and 6 kernels are supported")
        object.__setattr__(self, "kernels", tuple(self.kernels))

    @property
    def m(self) -> int:
        return len(self.kernels)

    def values(self, series) -> np.ndarray:
        """Kernel matrix ``(m, T)``."""
        x = np.asarray(series, dtype=float)
        rows = []
        for k in self.kernels:
            vals = np.broadcast_to(np.asarray(k(x), dtype=float), x.shape[:1]).astype(float)
            if self.center:
                if np.ptp(vals) == 0.0:
                    vals = np.zeros_like(vals)
                else:
                    vals = vals - vals.mean()
            rows.append(vals)
        return np.vstack(rows)


def _kernel_matrix(series, kset: KernelSet) -> np.ndarray:
    K = kset.values(series)
    if K.shape[1] < K.shape[0]:
        raise ValueError("series length must be at least the kernel order")
    return K


# ---------------------------------------------------------------------------
# matrix-level evaluators; K has shape (m, T)
# ---------------------------------------------------------------------------


def w_of(K: np.ndarray) -> float:
    m, T = K.shape
    return float(T ** (m / 2) * np.prod(K.mean(axis=1)))


def jackknife_direct_of(K: np.ndarray) -> float:
    m, T = K.shape
    sums = K.sum(axis=1, keepdims=True)
    deleted = (T - 1) ** (-m / 2) * np.prod(sums - K, axis=0)
    return T * w_of(K) - (T - 1) * (T / (T - 1)) ** (m / 2) * deleted.mean()


def split_direct_of(K: np.ndarray) -> float:
    m, T = K.shape
    h = (T + 1) // 2
    halves = [K[:, :h], K[:, h:]]
    sub = [blk.shape[1] ** (-m / 2) * np.prod(blk.sum(axis=1)) for blk in halves]
    return 2.0 * w_of(K) - 2 ** (m / 2) * 0.5 * (sub[0] + sub[1])


def _third_order_sums(K):
    a, b, c = K
    s = K.sum(axis=1)
    d = float(np.sum(a * b * c))
    cross = s[0] * np.sum(b * c) + s[1] * np.sum(a * c) + s[2] * np.sum(a * b)
    pairs = cross - 3.0 * d  # sum over t1 != t2 of the three placements
    distinct = s[0] * s[1] * s[2] - cross + 2.0 * d  # sum over distinct triples
    return s, d, cross, pairs, distinct


def jackknife_closed_of(K: np.ndarray, arrangement: str = "distinct") -> float:
    m, T = K.shape
    bump = 1.0 + _perturbation
    if m == 1:
        return bump * w_of(K)
    if m == 2:
        s = K.sum(axis=1)
        off_diag = s[0] * s[1] - float(np.sum(K[0] * K[1]))
        return bump * off_diag / (T - 1)
    if m != 3:
        raise UnsupportedOrder(f"no jackknife closed form for order {m}")
    s, d, cross, pairs, distinct = _third_order_sums(K)
    rt = math.sqrt(T)
    if arrangement == "distinct":
        return (
            -bump * d / (rt * (T - 1))
            + pairs / (rt * (T - 1) ** 2)
            + (T + 1) * distinct / (rt * (T - 1) ** 2)
        )
    if arrangement == "centred":
        return (
            w_of(K)
            + bump * (1 - 2 * T) / (rt * (T - 1)) * d / T
            + (-(T**2) + 3 * T - 1) / ((T - 1) ** 2 * T**1.5) * pairs
            + (3 * T - 1) / ((T - 1) ** 2 * T**1.5) * distinct
        )
    if arrangement == "moment":
        return (
            bump * (T * T + T) / (T - 1) ** 2 * w_of(K)
            - T * T / (T - 1) ** 2 * cross / T**1.5
            + T**1.5 / (T - 1) ** 2 * d / T
        )
    raise ValueError(f"unknown arrangement {arrangement!r}; choose from {JACKKNIFE_ARRANGEMENTS}")


def split_closed_of(K: np.ndarray) -> float:
    m, T = K.shape
    if m > 4:
        raise UnsupportedOrder(f"no split closed form for order {m}")
    if T % 2:
        raise OddLength(f"split closed forms need an even length, got {T}")
    bump = 1.0 + _perturbation
    h = T // 2
    first = K[:, :h].sum(axis=1)
    second = K[:, h:].sum(axis=1)
    if m == 1:
        return bump * w_of(K)
    if m == 2:
        return bump * 2.0 / T * (first[0] * second[1] + second[0] * first[1])
    coef = {3: 4.0 * T**-1.5, 4: 8.0 / T**2}[m]
    return 2.0 * w_of(K) - bump * coef * (np.prod(first) + np.prod(second))


# ---------------------------------------------------------------------------
# public API on (series, kernels)
# ---------------------------------------------------------------------------


def vstat(series, kset: KernelSet) -> float:
    """``T^(m/2) * prod_j mean(k_j)``, in O(mT)."""
    return w_of(_kernel_matrix(series, kset))


def jackknife_vstat_direct(series, kset: KernelSet) -> float:
    """Jackknife transform from the delete-one statistics."""
    return jackknife_direct_of(_kernel_matrix(series, kset))


def jackknife_vstat_closed(series, kset: KernelSet, arrangement: str = "distinct") -> float:
    """Closed form of the jackknife transform for ``m <= 3``.

    ``arrangement`` picks one of three algebraically equal groupings of the
    third-order terms: ``"distinct"`` (diagonal, pair and distinct-triple
    sums), ``"centred"`` (the same sums around ``W``) or ``"moment"`` (sample
    means of kernel products).
    """
    return jackknife_closed_of(_kernel_matrix(series, kset), arrangement)


def split_vstat_direct(series, kset: KernelSet) -> float:
    """``2W - 2^(m/2) (W1 + W2) / 2`` over the two halves of the series.

    Half statistics reuse the full-sample kernel values.  For odd lengths the
    first half takes the extra element.
    """
    return split_direct_of(_kernel_matrix(series, kset))


def split_vstat_closed(series, kset: KernelSet) -> float:
    """Closed form of the split transform for ``m <= 4`` and even length."""
    return split_closed_of(_kernel_matrix(series, kset))


# ---------------------------------------------------------------------------
# identity suite
# ---------------------------------------------------------------------------


def natural_scale(K: np.ndarray) -> float:
    """Typical magnitude of the statistics built from ``K``."""
    m, T = K.shape
    rms = np.sqrt((K * K).mean(axis=1))
    return float(T ** (m / 2) * np.prod(rms))


def relative_gap(a: float, b: float, K: np.ndarray) -> float:
    denom = max(abs(a), abs(b), natural_scale(K), 1e-300)
    return abs(a - b) / denom


def random_polynomial_kernels(
    rng: np.random.Generator, m: int, degree: int = 3, center: bool = True
) -> KernelSet:
    coefs = rng.standard_normal((m, degree + 1))
    return KernelSet(tuple(np.polynomial.Polynomial(c) for c in coefs), center=center)


@dataclass
class IdentityResult:
    name: str
    cases: int
    passed: int
    max_gap: float

    @property
    def ok(self) -> bool:
        return self.passed == self.cases


def identity_suite(cases: int = 1000, seed: int = 0, tol: float = 1e-10) -> list[IdentityResult]:
    """Compare closed and direct forms on random polynomial kernels.

    Series lengths are drawn from 4..24 (even lengths for the split forms).
    Kernels alternate between sample-centred and raw; the identities are
    algebraic in the kernel values, and raw kernels keep ``W`` away from zero.
    """
    rng = np.random.default_rng(seed)
    checks: list[tuple[str, int, Callable, Callable, bool]] = []
    for m in (1, 2, 3):
        for arr in JACKKNIFE_ARRANGEMENTS if m == 3 else ("distinct",):
            label = f"jackknife m={m}" + (f" ({arr})" if m == 3 else "")
            checks.append((label, m, jackknife_direct_of, lambda K, a=arr: jackknife_closed_of(K, a), False))
    for m in (1, 2, 3, 4):
        checks.append((f"split m={m}", m, split_direct_of, split_closed_of, True))

    results = []
    for label, m, direct, closed, even in checks:
        passed = 0
        worst = 0.0
        for case in range(cases):
            T = int(rng.integers(2, 13)) * 2 if even else int(rng.integers(4, 25))
            kset = random_polynomial_kernels(rng, m, center=case % 2 == 0)
            K = kset.values(rng.standard_normal(T))
            gap = relative_gap(direct(K), closed(K), K)
            worst = max(worst, gap)
            passed += int(gap <= tol)
        results.append(IdentityResult(label, cases, passed, float(worst)))
    return results
