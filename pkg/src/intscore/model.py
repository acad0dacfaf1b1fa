"""Core types and objective arithmetic for integer scoring systems.

A scoring system is a linear classifier with integer coefficients drawn
from a finite per-feature lattice. Training minimizes

    (1/N) * #{i : y_i * score(x_i) <= 0}  +  c0 * ||coef||_0  +  c1 * ||coef||_1

Loss counts are kept as exact rationals (count / N) and the penalty
weights c0, c1 are interpreted as exact decimals, so objective values
compare without floating-point tie ambiguity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

INTERCEPT_POLICIES = ("none", "unpenalized", "penalized")

# Penalty weights must be exact decimals with a bounded number of digits so
# that scaled-integer objective arithmetic stays within int64.
MAX_PENALTY_DIGITS = 9
MAX_PENALTY_MAGNITUDE = 10 ** 6


def as_decimal_fraction(value, name: str = "value") -> Fraction:
    """Read a penalty weight as an exact decimal fraction.

    Floats go through their shortest decimal repr, so 0.1 means 1/10, not
    the nearest binary double.
    """
    if isinstance(value, Fraction):
        frac = value
    elif isinstance(value, int):
        frac = Fraction(value)
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")
        frac = Fraction(Decimal(repr(value)))
    elif isinstance(value, (str, Decimal)):
        try:
            frac = Fraction(Decimal(str(value)))
        except InvalidOperation as exc:
            raise ValueError(f"{name} is not a decimal number: {value!r}") from exc
    else:
        raise TypeError(f"{name} must be a number, got {type(value).__name__}")
    if frac.denominator > 10 ** MAX_PENALTY_DIGITS or (
        10 ** MAX_PENALTY_DIGITS) % frac.denominator != 0:
        raise ValueError(
            f"{name} must be a decimal with at most {MAX_PENALTY_DIGITS} "
            f"fractional digits, got {value!r}")
    if abs(frac) > MAX_PENALTY_MAGNITUDE:
        raise ValueError(f"{name} is implausibly large: {value!r}")
    return frac


@dataclass(frozen=True)
class Dataset:
    """Immutable training data: N x P feature matrix with labels in {-1,+1}."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"features must be a nonempty 2-d matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain NaN or Inf")
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels must have shape ({x.shape[0]},), got {y.shape}")
        if not np.all(np.isin(y, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != x.shape[1]:
            raise ValueError(f"expected {x.shape[1]} feature names, got {len(names)}")
        if any(not n for n in names):
            raise ValueError("feature names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError("feature names must be distinct")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names)

    def is_integral(self) -> bool:
        return bool(np.all(self.features == np.round(self.features)))


@dataclass(frozen=True)
class CoefficientLattice:
    """Per-feature finite sets of allowed integer coefficients.

    Every per-feature set contains 0 (so fully sparse models are always
    expressible) and is capped in magnitude by `bound`.
    """

    sets: tuple[tuple[int, ...], ...]
    bound: int

    def __post_init__(self):
        if not self.sets:
            raise ValueError("lattice needs at least one coordinate set")
        bound = int(self.bound)
        if bound < 1:
            raise ValueError(f"bound must be a positive integer, got {self.bound!r}")
        norm = []
        for j, values in enumerate(self.sets):
            vals = tuple(sorted({int(v) for v in values}))
            if not vals:
                raise ValueError(f"coordinate {j} has an empty value set")
            if 0 not in vals:
                raise ValueError(f"coordinate {j} must allow 0")
            if any(abs(v) > bound for v in vals):
                raise ValueError(f"coordinate {j} exceeds the bound {bound}")
            norm.append(vals)
        object.__setattr__(self, "sets", tuple(norm))
        object.__setattr__(self, "bound", bound)

    @classmethod
    def uniform(cls, values: Iterable[int], p: int, bound: int | None = None) -> "CoefficientLattice":
        vals = tuple(sorted({int(v) for v in values}))
        if bound is None:
            bound = max((abs(v) for v in vals), default=0) or 1
        return cls(tuple(vals for _ in range(p)), bound)

    @classmethod
    def full_range(cls, bound: int, p: int) -> "CoefficientLattice":
        return cls.uniform(range(-bound, bound + 1), p, bound)

    @property
    def p(self) -> int:
        return len(self.sets)

    def is_full_range(self) -> bool:
        full = tuple(range(-self.bound, self.bound + 1))
        return all(s == full for s in self.sets)

    def contains(self, coefficients: Sequence[int]) -> bool:
        if len(coefficients) != self.p:
            return False
        return all(int(c) in set(s) for c, s in zip(coefficients, self.sets))


@dataclass(frozen=True)
class TrainConfig:
    """Penalties and solve budget.

    c0/c1 are read as exact decimals (floats via their shortest repr).
    big_m None means the auto rule bound * max|x_ij|, resolved per dataset.
    node_limit is an optional deterministic budget: the search stops after
    expanding that many nodes, independent of wall time.
    """

    c0: float | str | Fraction = 0.01
    c1: float | str | Fraction = 0.001
    epsilon: float = 0.1
    big_m: float | None = None
    intercept: str = "unpenalized"
    time_limit: float = 300.0
    threads: int = 1
    seed: int = 0
    node_limit: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "_c0", as_decimal_fraction(self.c0, "c0"))
        object.__setattr__(self, "_c1", as_decimal_fraction(self.c1, "c1"))
        if self._c0 < 0 or self._c1 < 0:
            raise ValueError("c0 and c1 must be nonnegative")
        if not (float(self.epsilon) > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        if self.big_m is not None and not (float(self.big_m) > 0):
            raise ValueError(f"big_m must be positive or None, got {self.big_m!r}")
        if self.intercept not in INTERCEPT_POLICIES:
            raise ValueError(f"intercept must be one of {INTERCEPT_POLICIES}, got {self.intercept!r}")
        if not (float(self.time_limit) > 0):
            raise ValueError("time_limit must be positive")
        if int(self.threads) < 1:
            raise ValueError("threads must be a positive integer")
        if self.node_limit is not None and int(self.node_limit) < 1:
            raise ValueError("node_limit must be positive when given")

    @property
    def c0_exact(self) -> Fraction:
        return self._c0

    @property
    def c1_exact(self) -> Fraction:
        return self._c1

    def resolved_big_m(self, data: Dataset, lattice: CoefficientLattice) -> float:
        if self.big_m is not None:
            return float(self.big_m)
        return float(lattice.bound * np.max(np.abs(data.features)))


@dataclass(frozen=True)
class ScoringSystem:
    """Integer coefficient vector plus intercept; predicts sign(score)."""

    coefficients: tuple[int, ...]
    intercept: int
    feature_names: tuple[str, ...]
    lattice_id: str = ""

    def __post_init__(self):
        coefs = tuple(int(c) for c in self.coefficients)
        names = tuple(str(n) for n in self.feature_names)
        if len(coefs) != len(names):
            raise ValueError(f"{len(coefs)} coefficients but {len(names)} feature names")
        if not coefs:
            raise ValueError("a scoring system needs at least one feature")
        object.__setattr__(self, "coefficients", coefs)
        object.__setattr__(self, "intercept", int(self.intercept))
        object.__setattr__(self, "feature_names", names)

    @property
    def p(self) -> int:
        return len(self.coefficients)

    @property
    def model_size(self) -> int:
        """Count of nonzero coefficients; the intercept does not count."""
        return sum(1 for c in self.coefficients if c != 0)

    @property
    def l1_norm(self) -> int:
        return sum(abs(c) for c in self.coefficients)

    def coefficient_array(self) -> np.ndarray:
        return np.asarray(self.coefficients, dtype=np.float64)


@dataclass(frozen=True)
class GeneralizationBound:
    """True-risk bound: empirical risk plus a slack in log K, n and delta."""

    empirical_risk: float
    log_k: float
    delta: float
    n: int
    bound_value: float = field(init=False)

    def __post_init__(self):
        if not (0.0 <= self.empirical_risk <= 1.0):
            raise ValueError(f"empirical_risk must lie in [0,1], got {self.empirical_risk!r}")
        if self.log_k < 0:
            raise ValueError(f"log_k must be nonnegative, got {self.log_k!r}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0,1), got {self.delta!r}")
        if int(self.n) < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        slack = math.sqrt((self.log_k - math.log(self.delta)) / (2.0 * self.n))
        object.__setattr__(self, "bound_value", self.empirical_risk + slack)

    @property
    def slack(self) -> float:
        return self.bound_value - self.empirical_risk


def _check_dims(model: ScoringSystem, p: int):
    if model.p != p:
        raise ValueError(f"model has {model.p} coefficients but input has {p} features")


def scores(model: ScoringSystem, features: np.ndarray) -> np.ndarray:
    """Raw scores intercept + x . coef for each row of `features`."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    _check_dims(model, x.shape[1])
    return x @ model.coefficient_array() + model.intercept


def predict(model: ScoringSystem, x: Sequence[float]) -> int:
    """Predicted label for one example; a score of exactly 0 maps to -1.

    The zero convention mirrors the training loss, which counts
    y * score <= 0 as an error.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single feature vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature vector contains NaN or Inf")
    s = scores(model, x)[0]
    return 1 if s > 0 else -1


def predict_many(model: ScoringSystem, features: np.ndarray) -> np.ndarray:
    s = scores(model, features)
    return np.where(s > 0, 1, -1).astype(np.int64)


def loss_count(data: Dataset, model: ScoringSystem) -> int:
    """Number of training errors #{i : y_i * score_i <= 0}."""
    _check_dims(model, data.p)
    margins = data.labels * scores(model, data.features)
    return int(np.count_nonzero(margins <= 0))


def zero_one_loss(data: Dataset, model: ScoringSystem) -> float:
    """Training loss (1/N) #{i : y_i * score_i <= 0}.

    Note the <= 0: a zero score counts as an error for both classes, so
    this is the objective's loss term, not the predict-disagreement rate.
    """
    return loss_count(data, model) / data.n


def prediction_error(data: Dataset, model: ScoringSystem) -> float:
    """Fraction of examples where predict() disagrees with the label."""
    _check_dims(model, data.p)
    return float(np.mean(predict_many(model, data.features) != data.labels))


def objective_exact(data: Dataset, model: ScoringSystem, cfg: TrainConfig) -> Fraction:
    """Exact rational value of loss + c0*||coef||_0 + c1*||coef||_1."""
    nnz = model.model_size
    l1 = model.l1_norm
    if cfg.intercept == "penalized":
        nnz += 1 if model.intercept != 0 else 0
        l1 += abs(model.intercept)
    return (Fraction(loss_count(data, model), data.n)
            + cfg.c0_exact * nnz + cfg.c1_exact * l1)


def objective(data: Dataset, model: ScoringSystem, cfg: TrainConfig) -> float:
    return float(objective_exact(data, model, cfg))


def log_cardinality(lattice: CoefficientLattice) -> float:
    """Exact log of the number of expressible coefficient vectors.

    Always at most p * log(2*bound + 1), with equality only for the full
    integer range on every coordinate.
    """
    return float(sum(math.log(len(s)) for s in lattice.sets))


def generalization_bound(r_emp: float, log_k: float, n: int, delta: float) -> GeneralizationBound:
    """Bound true risk by r_emp + sqrt((log_k - log(delta)) / (2n))."""
    return GeneralizationBound(empirical_risk=float(r_emp), log_k=float(log_k),
                               delta=float(delta), n=int(n))
