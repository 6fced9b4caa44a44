"""Synthetic populations: linear and Liang outcome surfaces, cost schemes.

Both potential outcomes are generated together, before any assignment is
drawn; designs only ever choose which one to reveal.  Covariates 1-20
(indices 0-19) carry the signal in every surface.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from typing import TextIO

import numpy as np
from numpy.typing import NDArray

from darts_rct.errors import InvalidInputError

N_SIGNAL = 20
TAU = 4.0
COST_FLOOR = 1e-6


class DgpKind(str, Enum):
    LINEAR = "linear"
    LIANG = "liang"
    LIANG_HETERO = "liang_hetero"


class CostKind(str, Enum):
    EQUAL = "equal"
    UNIFORM = "uniform"
    ORACLE_COSTLY = "oracle_costly"


@dataclass(frozen=True)
class OutcomeSurface:
    kind: DgpKind
    beta: NDArray[np.float64]
    tau: float = TAU
    noise_sd: float = 1.0

    @property
    def p(self) -> int:
        return self.beta.size


@dataclass(frozen=True)
class Batch:
    """One batch of units with both potential outcomes."""

    x: NDArray[np.float64]
    y0: NDArray[np.float64]
    y1: NDArray[np.float64]

    @property
    def n(self) -> int:
        return self.y0.size

    @property
    def unit_effects(self) -> NDArray[np.float64]:
        return self.y1 - self.y0

    def observe(self, z: NDArray) -> NDArray[np.float64]:
        """Outcome revealed under assignment ``z``."""
        zb = np.asarray(z).astype(bool)
        return np.where(zb, self.y1, self.y0)


def _check_p(p: int) -> None:
    if p < N_SIGNAL:
        raise InvalidInputError(f"p must be >= {N_SIGNAL}, got {p}")


def draw_beta_coefficients(
    p: int, rng: np.random.Generator, spread_is_sd: bool = False
) -> NDArray[np.float64]:
    """Coefficients N(2, 0.1) for 1-10, N(-2, 0.05) for 11-20, N(0, 0.01) beyond.

    The second parameter is read as a variance unless ``spread_is_sd``.
    """
    _check_p(p)
    spread = np.empty(p)
    mean = np.zeros(p)
    mean[:10], mean[10:20] = 2.0, -2.0
    spread[:10], spread[10:20], spread[20:] = 0.1, 0.05, 0.01
    sd = spread if spread_is_sd else np.sqrt(spread)
    return mean + sd * rng.standard_normal(p)


def make_surface(
    kind: DgpKind | str,
    p: int,
    rng: np.random.Generator,
    tau: float = TAU,
    noise_sd: float = 1.0,
    spread_is_sd: bool = False,
) -> OutcomeSurface:
    return OutcomeSurface(
        DgpKind(kind), draw_beta_coefficients(p, rng, spread_is_sd), tau, noise_sd
    )


def gen_linear_batch(
    surface: OutcomeSurface, n: int, p: int, rng: np.random.Generator
) -> Batch:
    """Independent N(0, 1) covariates; ``Y(0) = X b + 2 X1 X5 + e``."""
    _check_p(p)
    x = rng.standard_normal((n, p))
    eps = surface.noise_sd * rng.standard_normal(n)
    y0 = x @ surface.beta[:p] + 2.0 * x[:, 0] * x[:, 4] + eps
    return Batch(x, y0, y0 + surface.tau)


def _liang_unit_scale(n: int, p: int, rng: np.random.Generator) -> NDArray[np.float64]:
    # shared random effect e_i makes every pair of columns positively correlated
    e = rng.standard_normal((n, 1))
    raw = (e + rng.standard_normal((n, p))) / 2.0
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (raw - lo) / span


def _liang_baseline(x: NDArray[np.float64], beta: NDArray[np.float64], eps) -> NDArray:
    return (
        10.0 * x[:, 1] / (1.0 + x[:, 0] ** 2)
        + 5.0 * np.sin(x[:, 2] - x[:, 3])
        + 2.0 * x[:, 4]
        + x @ beta
        + eps
    )


def gen_liang_batch(
    surface: OutcomeSurface, n: int, p: int, rng: np.random.Generator
) -> Batch:
    """Liang covariates (min-max scaled per batch, then centred) and outcomes."""
    _check_p(p)
    unit = _liang_unit_scale(n, p, rng)
    x = unit - unit.mean(axis=0)
    eps = surface.noise_sd * rng.standard_normal(n)
    y0 = _liang_baseline(x, surface.beta[:p], eps)
    return Batch(x, y0, y0 + surface.tau)


def hetero_effect(unit: NDArray[np.float64]) -> NDArray[np.float64]:
    """Friedman-style unit effect of covariates 6-10 on their [0, 1] scale."""
    return (
        2.0
        + 3.0 * np.sin(np.pi * unit[:, 5] * unit[:, 6])
        + 4.0 * (unit[:, 7] - 0.5) ** 2
        + 2.0 * unit[:, 8]
        + unit[:, 9]
    )


def gen_hetero_te_batch(
    surface: OutcomeSurface, n: int, p: int, rng: np.random.Generator
) -> Batch:
    """Liang baseline with unit-level effects driven by covariates 6-10.

    The effect function is evaluated on the [0, 1]-scaled covariates (before
    centring); the revealed covariates are the centred ones, as in the
    constant-effect Liang surface.
    """
    _check_p(p)
    unit = _liang_unit_scale(n, p, rng)
    x = unit - unit.mean(axis=0)
    eps = surface.noise_sd * rng.standard_normal(n)
    y0 = _liang_baseline(x, surface.beta[:p], eps)
    return Batch(x, y0, y0 + hetero_effect(unit))


GENERATORS = {
    DgpKind.LINEAR: gen_linear_batch,
    DgpKind.LIANG: gen_liang_batch,
    DgpKind.LIANG_HETERO: gen_hetero_te_batch,
}


def gen_batch(surface: OutcomeSurface, n: int, rng: np.random.Generator) -> Batch:
    return GENERATORS[surface.kind](surface, n, surface.p, rng)


def make_costs(
    scheme: CostKind | str, p: int, rng: np.random.Generator | None = None
) -> NDArray[np.float64]:
    """Raw per-covariate costs; see :func:`rescale_costs` for the (0, 1] form."""
    scheme = CostKind(scheme)
    if p < 1:
        raise InvalidInputError("p must be >= 1")
    if scheme is CostKind.EQUAL:
        return np.ones(p)
    if scheme is CostKind.UNIFORM:
        if rng is None:
            raise InvalidInputError("uniform costs need a random generator")
        return np.maximum(rng.uniform(0.0, 2.0, p), COST_FLOOR)
    c = np.full(p, 0.8)
    c[: min(N_SIGNAL, p)] = 1.1
    return c


def rescale_costs(costs: NDArray[np.float64], budget: float) -> tuple[NDArray[np.float64], float]:
    """Divide costs and budget by the largest cost when it exceeds one."""
    top = float(np.max(costs))
    if top <= 1.0:
        return np.asarray(costs, dtype=float), float(budget)
    return np.asarray(costs, dtype=float) / top, float(budget) / top


def write_batch_csv(batch: Batch, out: TextIO) -> None:
    """Columnar dump: ``unit_id, x1..xp, y0, y1``."""
    p = batch.x.shape[1]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["unit_id", *[f"x{j + 1}" for j in range(p)], "y0", "y1"])
    for i in range(batch.n):
        w.writerow([i, *(repr(float(v)) for v in batch.x[i]), repr(float(batch.y0[i])), repr(float(batch.y1[i]))])


def read_batch_csv(src: TextIO | str) -> Batch:
    text = src if isinstance(src, str) else src.read()
    arr = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    return Batch(arr[:, 1:-2], arr[:, -2], arr[:, -1])
