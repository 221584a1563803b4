"""Process taxonomy, parameter validation and the result types shared by all engines.

Every engine takes a :class:`ProcessSpec` and returns :class:`DistributionSnapshot`
objects that can be compared index by index.  One-type snapshots start at
``m = 1`` (for the immigration model ``m`` counts the stem cell plus its
mortal offspring); two-type snapshots start at ``(m, n) = (0, 0)``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

__all__ = [
    "Kind",
    "Engine",
    "ProcessSpec",
    "DistributionSnapshot",
    "MomentSet",
    "validate",
    "IBPError",
    "DomainError",
    "ValidationError",
    "NegativeRate",
    "RateOutOfRange",
    "MissingParameter",
    "ConvergenceError",
    "TruncationError",
    "StiffnessError",
    "PrecisionError",
    "SchemaMismatch",
    "ResourceError",
    "AliasWarning",
]


class IBPError(Exception):
    """Base class for all errors raised by the toolkit."""


class DomainError(IBPError, ValueError):
    """Argument outside the domain where a formula is defined."""


class ValidationError(IBPError, ValueError):
    """A :class:`ProcessSpec` violates one of its invariants."""


class NegativeRate(ValidationError):
    pass


class RateOutOfRange(ValidationError):
    pass


class MissingParameter(ValidationError):
    pass


class ConvergenceError(IBPError, ArithmeticError):
    """A numerical procedure did not reach its error target.

    ``diagnostics`` carries whatever the failing routine could report.
    """

    def __init__(self, message: str, **diagnostics: Any):
        super().__init__(message)
        self.diagnostics = diagnostics


class TruncationError(IBPError):
    """The tail budget of a truncated master equation could not be met."""


class StiffnessError(IBPError, ArithmeticError):
    """Step size underflow in an ODE integration."""


class PrecisionError(IBPError, ArithmeticError):
    """A truncation-error bound exceeds the requested tolerance."""


class SchemaMismatch(IBPError, ValueError):
    """Two snapshot files cannot be compared."""


class ResourceError(IBPError, MemoryError):
    pass


class AliasWarning(UserWarning):
    """Probability mass beyond a coefficient-extraction grid is not negligible."""


class Kind(enum.Enum):
    CRITICAL = "critical"
    NOEXT = "noext"
    IMMIGRATION = "immigration"
    TWOTYPE = "twotype"

    @classmethod
    def parse(cls, value: "str | Kind") -> "Kind":
        if isinstance(value, Kind):
            return value
        key = str(value).strip().lower()
        aliases = {
            "critical": cls.CRITICAL,
            "noext": cls.NOEXT,
            "noextinction": cls.NOEXT,
            "immigration": cls.IMMIGRATION,
            "twotype": cls.TWOTYPE,
            "twotypesource": cls.TWOTYPE,
        }
        try:
            return aliases[key.replace("_", "").replace("-", "")]
        except KeyError:
            raise ValidationError(f"unknown process kind {value!r}") from None

    @property
    def two_type(self) -> bool:
        return self is Kind.TWOTYPE

    @property
    def origin(self) -> int:
        """Smallest population index reported in snapshots."""
        return 0 if self is Kind.TWOTYPE else 1


class Engine(enum.Enum):
    CLOSED_FORM = "ClosedForm"
    MASTER_EQ = "MasterEq"
    MONTE_CARLO = "MonteCarlo"
    LAPLACE_INV = "LaplaceInv"
    CHARACTERISTICS = "Characteristics"


_PARAMS = ("beta", "r", "gamma")
_REQUIRED = {
    Kind.CRITICAL: (),
    Kind.NOEXT: (),
    Kind.IMMIGRATION: ("beta",),
    Kind.TWOTYPE: ("beta", "r", "gamma"),
}


@dataclass(frozen=True)
class ProcessSpec:
    """Which process to run and its rate parameters.

    Critical and no-extinction branching have unit birth and death rates and
    take no parameters.  ``beta`` is the stem-cell source rate, ``r`` the
    symmetric division rate of progenitors and ``gamma`` the removal rate of
    post-mitotic cells.
    """

    kind: Kind
    beta: float | None = None
    r: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        for name in _PARAMS:
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, float(value))

    @classmethod
    def critical(cls) -> "ProcessSpec":
        return cls(Kind.CRITICAL)

    @classmethod
    def noext(cls) -> "ProcessSpec":
        return cls(Kind.NOEXT)

    @classmethod
    def immigration(cls, beta: float) -> "ProcessSpec":
        return cls(Kind.IMMIGRATION, beta=beta)

    @classmethod
    def twotype(cls, r: float, gamma: float, beta: float) -> "ProcessSpec":
        return cls(Kind.TWOTYPE, beta=beta, r=r, gamma=gamma)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "beta": self.beta, "r": self.r, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProcessSpec":
        if "kind" not in data:
            raise MissingParameter("process spec has no 'kind'")
        unknown = set(data) - {"kind", *_PARAMS}
        if unknown:
            raise ValidationError(f"unknown fields in process spec: {sorted(unknown)}")
        return cls(data["kind"], **{k: data.get(k) for k in _PARAMS})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProcessSpec":
        return cls.from_dict(json.loads(text))


def validate(spec: ProcessSpec) -> ProcessSpec:
    """Check the invariants of ``spec``; return it unchanged or raise.

    Raises
    ------
    MissingParameter
        A rate required by the process is absent (or the source rate of the
        immigration model is zero).
    NegativeRate
        A rate is negative or not finite.
    RateOutOfRange
        ``r`` outside ``(0, 1/2]`` or ``gamma`` not positive.
    ValidationError
        A parameter was given to a process that does not use it.
    """
    required = _REQUIRED[spec.kind]
    for name in _PARAMS:
        value = getattr(spec, name)
        if name not in required:
            if value is not None:
                raise ValidationError(f"{spec.kind.value} takes no parameter {name!r}")
            continue
        if value is None:
            raise MissingParameter(f"{spec.kind.value} requires {name!r}")
        if not math.isfinite(value):
            raise NegativeRate(f"{name}={value} is not a finite rate")
        if value < 0:
            raise NegativeRate(f"{name}={value} is negative")

    if spec.kind is Kind.IMMIGRATION and spec.beta == 0:
        raise MissingParameter("immigration requires an active source, beta > 0")
    if spec.kind is Kind.TWOTYPE:
        if not 0 < spec.r <= 0.5:
            raise RateOutOfRange(f"r={spec.r} outside (0, 1/2]; the rate 1-2r must be nonnegative")
        if spec.gamma <= 0:
            raise RateOutOfRange(f"gamma={spec.gamma} must be positive")
    return spec


@dataclass(frozen=True)
class DistributionSnapshot:
    """Probability distribution over population size at one time.

    ``probs[i]`` is the probability of population ``origin + i`` (one-type) or
    ``probs[i, j]`` of ``(i, j)`` (two-type, ``origin = 0``).  ``tail_mass``
    bounds the probability outside the array.  ``extinct_mass`` is only
    nonzero for critical branching, whose support m >= 1 leaves the extinct
    state out of ``probs``.
    """

    time: float
    probs: np.ndarray
    tail_mass: float
    engine: Engine
    origin: int = 1
    extinct_mass: float = 0.0
    tolerance: float = 1e-8
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def two_type(self) -> bool:
        return np.ndim(self.probs) == 2

    @property
    def total(self) -> float:
        return float(np.sum(self.probs)) + self.extinct_mass

    def indices(self) -> np.ndarray:
        """Population sizes labelling ``probs`` (one-type only)."""
        return self.origin + np.arange(np.shape(self.probs)[0])

    def marginal(self, axis: int = 0) -> np.ndarray:
        """Marginal over progenitors (axis 0) or post-mitotic cells (axis 1)."""
        if not self.two_type:
            return np.asarray(self.probs)
        return np.asarray(self.probs).sum(axis=1 - axis)


@dataclass(frozen=True)
class MomentSet:
    """Integer moments <m^0>, ..., <m^k> at one time.

    ``bounds`` holds truncation-error bounds when the moments come from a
    truncated distribution; ``stderr`` holds Monte Carlo standard errors.
    """

    time: float
    values: tuple
    stderr: tuple | None = None
    bounds: tuple | None = None

    @property
    def k_max(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, k: int) -> float:
        return self.values[k]
