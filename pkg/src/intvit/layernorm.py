"""LayerNorm quantizer without per-element division or square root.

Row statistics come from Welford's one-pass recurrence.  The quantizer
decision ``gamma * (x - mu) / sigma + beta > s_k`` is rewritten as a
comparison between ``(x - mu)**2`` and ``B_k**2 * var`` with
``B_k = (s_k - beta) / gamma`` fixed at configuration time, plus sign logic
to recover the direction of the inequality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_float_matrix, check_vector
from .quant import QuantParams, boundary_refs


@dataclass(frozen=True)
class RunningStats:
    """Welford accumulator: element count, running mean, sum of squared deviations.

    Fields may be scalars or equally-shaped arrays (one accumulator per row).
    """

    i: int = 0
    mu: float | np.ndarray = 0.0
    m2: float | np.ndarray = 0.0


def welford_update(st: RunningStats, x) -> RunningStats:
    i = st.i + 1
    delta = x - st.mu
    mu = st.mu + delta / i
    m2 = st.m2 + delta * (x - mu)
    return RunningStats(i, mu, m2)


def welford(values) -> RunningStats:
    st = RunningStats()
    for x in values:
        st = welford_update(st, float(x))
    return st


def welford_rows(rows: np.ndarray) -> RunningStats:
    """Run one accumulator per row, feeding columns left to right."""
    st = RunningStats(0, np.zeros(rows.shape[0]), np.zeros(rows.shape[0]))
    for c in range(rows.shape[1]):
        st = welford_update(st, rows[:, c])
    return st


def finalize(st: RunningStats):
    """``(mean, population variance)``."""
    if st.i == 0:
        raise ValueError("cannot finalize statistics of an empty stream")
    return st.mu, st.m2 / st.i


def _exceeds(a, b, var):
    """Decide ``a > b * sqrt(var)`` for ``var > 0`` using only products and signs."""
    sa = np.sign(a)
    sb = np.sign(b)
    lhs = a * a
    rhs = b * b * var
    return np.where(
        sa != sb,
        sa > sb,
        np.where(sa > 0, lhs > rhs, np.where(sa < 0, lhs < rhs, False)),
    )


def _decide(a, b, var, gamma_negative, beta_above):
    # gamma < 0 flips the inequality: a < b*sigma  <=>  -a > -b*sigma
    a = np.where(gamma_negative, -a, a)
    b = np.where(gamma_negative, -b, b)
    return np.where(var == 0, beta_above, _exceeds(a, b, np.where(var == 0, 1.0, var)))


def ln_compare(x, mu, var, ref_s, gamma_c, beta_c):
    """Truth of ``gamma_c * (x - mu) / sqrt(var) + beta_c > ref_s``.

    A zero-variance row compares ``beta_c > ref_s`` directly.
    """
    if np.any(np.asarray(gamma_c) == 0):
        raise ValueError("gamma must be nonzero")
    if np.any(np.asarray(var) < 0):
        raise ValueError("variance must be non-negative")
    b = (np.asarray(ref_s, dtype=np.float64) - beta_c) / gamma_c
    out = _decide(
        np.asarray(x, dtype=np.float64) - mu,
        b,
        np.asarray(var, dtype=np.float64),
        np.asarray(gamma_c) < 0,
        np.asarray(beta_c) > ref_s,
    )
    return bool(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class LNQuantSpec:
    gamma: np.ndarray
    beta: np.ndarray
    out_params: QuantParams

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        beta = check_vector(self.beta, gamma.shape[0], name="beta")
        if gamma.ndim != 1:
            raise ValueError("gamma must be a vector")
        if np.any(gamma == 0):
            raise ValueError("gamma must be nonzero")
        refs = np.asarray(boundary_refs(self.out_params))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "refs", refs)
        # per-(channel, reference) constants; the only divisions in the datapath
        object.__setattr__(self, "b_table", (refs[None, :] - beta[:, None]) / gamma[:, None])
        object.__setattr__(self, "beta_above", beta[:, None] > refs[None, :])

    @property
    def n_channels(self) -> int:
        return self.gamma.shape[0]


def compare_table(rows: np.ndarray, mu: np.ndarray, var: np.ndarray, spec: LNQuantSpec) -> np.ndarray:
    """Boolean ``(rows, channels, refs)`` comparator outputs for finalized row statistics."""
    a = (rows - mu[:, None])[:, :, None]
    return _decide(
        a,
        spec.b_table[None, :, :],
        var[:, None, None],
        (spec.gamma < 0)[None, :, None],
        spec.beta_above[None, :, :],
    )


def ln_quantize(rows, spec: LNQuantSpec) -> np.ndarray:
    """Quantized LayerNorm of every row of a matrix (int8 codes)."""
    rows = check_float_matrix(rows, name="rows")
    if rows.shape[1] != spec.n_channels:
        raise ValueError(f"dimension mismatch: rows have {rows.shape[1]} channels, spec has {spec.n_channels}")
    if rows.shape[1] == 0:
        raise ValueError("rows must be non-empty")
    mu, var = finalize(welford_rows(rows))
    passed = compare_table(rows, mu, var, spec)
    return (spec.out_params.qmin + passed.sum(axis=-1)).astype(np.int8)


def ln_quantize_row(row, spec: LNQuantSpec) -> np.ndarray:
    return ln_quantize(np.asarray(row, dtype=np.float64)[None, :], spec)[0]
