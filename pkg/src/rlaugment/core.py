"""Spectrograms, deformation operations, policies and the policy search space.

Policies have a compact text form, one term per operation::

    TimeWarp(W=20);MinTimeMsk(m=2,T=7);MaxFreqMsk(m=1,F=3)
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import numpy as np


class PolicyError(ValueError):
    """Raised for malformed policy text or out-of-grid operation values."""


class OperationKind(enum.IntEnum):
    TimeMask = 1
    FreqMask = 2
    TimeWarp = 3
    MaxTimeMask = 4
    MaxFreqMask = 5
    MinTimeMask = 6
    MinFreqMask = 7

    @property
    def token(self) -> str:
        return _KIND_TOKENS[self]

    @property
    def axis(self) -> str | None:
        if self is OperationKind.TimeWarp:
            return None
        return "time" if "Time" in self.name else "freq"

    @property
    def fill(self) -> str | None:
        if self is OperationKind.TimeWarp:
            return None
        if self.name.startswith("Max"):
            return "max"
        if self.name.startswith("Min"):
            return "min"
        return "mean"

    @property
    def size_letter(self) -> str | None:
        axis = self.axis
        if axis is None:
            return None
        return "T" if axis == "time" else "F"


_KIND_TOKENS = {
    OperationKind.TimeMask: "TimeMsk",
    OperationKind.FreqMask: "FreqMsk",
    OperationKind.TimeWarp: "TimeWarp",
    OperationKind.MaxTimeMask: "MaxTimeMsk",
    OperationKind.MaxFreqMask: "MaxFreqMsk",
    OperationKind.MinTimeMask: "MinTimeMsk",
    OperationKind.MinFreqMask: "MinFreqMsk",
}
_TOKEN_KINDS = {v: k for k, v in _KIND_TOKENS.items()}

ALL_KINDS = tuple(OperationKind)
FREQ_MASK_KINDS = tuple(k for k in OperationKind if k.axis == "freq")
TIME_MASK_KINDS = tuple(k for k in OperationKind if k.axis == "time")


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Time-major feature matrix of shape ``(n_time, n_freq)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"spectrogram must be a non-empty 2-D matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("spectrogram contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_time(self) -> int:
        return self.values.shape[0]

    @property
    def n_freq(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, Spectrogram):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.shape, self.values.tobytes()))


@dataclass(frozen=True)
class OperationSpec:
    """One parameterised deformation.

    Mask kinds carry ``count`` (number of masks) and ``size`` (mask width
    cap); ``TimeWarp`` carries only ``warp`` (number of inserted frames).
    """

    kind: OperationKind
    count: int | None = None
    size: int | None = None
    warp: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", OperationKind(self.kind))
        if self.kind is OperationKind.TimeWarp:
            if self.warp is None or self.count is not None or self.size is not None:
                raise PolicyError("TimeWarp takes exactly one parameter W")
        elif self.count is None or self.size is None or self.warp is not None:
            raise PolicyError(f"{self.kind.token} takes exactly parameters m and {self.kind.size_letter}")
        for name in ("count", "size", "warp"):
            v = getattr(self, name)
            if v is not None and (isinstance(v, bool) or int(v) != v or v < 0):
                raise PolicyError(f"{name} must be a non-negative integer, got {v!r}")

    def __str__(self):
        if self.kind is OperationKind.TimeWarp:
            return f"TimeWarp(W={self.warp})"
        return f"{self.kind.token}(m={self.count},{self.kind.size_letter}={self.size})"


@dataclass(frozen=True)
class Policy:
    ops: tuple[OperationSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not self.ops:
            raise PolicyError("a policy needs at least one operation")

    def __len__(self):
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    def __str__(self):
        return format_policy(self)

    @property
    def total_warp(self) -> int:
        return sum(op.warp for op in self.ops if op.kind is OperationKind.TimeWarp)


def _check_grid(name, values):
    values = tuple(int(v) for v in values)
    if not values:
        raise ValueError(f"{name} grid is empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} grid must be strictly increasing")
    return values


@dataclass(frozen=True)
class SearchSpace:
    """Allowed operation kinds and value grids.

    ``distinct`` forbids repeating an operation kind inside one policy.
    """

    kinds: tuple[OperationKind, ...] = ALL_KINDS
    counts: tuple[int, ...] = (1, 2, 3, 4, 5)
    sizes: tuple[int, ...] = tuple(range(1, 11))
    warps: tuple[int, ...] = tuple(range(10, 60, 5))
    policy_length: int = 3
    distinct: bool = False

    def __post_init__(self):
        kinds = tuple(OperationKind(k) for k in self.kinds)
        if not kinds or len(set(kinds)) != len(kinds):
            raise ValueError("kinds must be non-empty and unique")
        object.__setattr__(self, "kinds", tuple(sorted(kinds)))
        object.__setattr__(self, "counts", _check_grid("counts", self.counts))
        object.__setattr__(self, "sizes", _check_grid("sizes", self.sizes))
        object.__setattr__(self, "warps", _check_grid("warps", self.warps))
        if self.policy_length < 1:
            raise ValueError("policy_length must be >= 1")
        if self.distinct and self.policy_length > len(kinds):
            raise ValueError("distinct policies need at least policy_length kinds")

    def check_op(self, op: OperationSpec) -> None:
        if op.kind not in self.kinds:
            raise PolicyError(f"operation {op.kind.token} is not in the search space")
        if op.kind is OperationKind.TimeWarp:
            if op.warp not in self.warps:
                raise PolicyError(f"W={op.warp} not in warp grid {list(self.warps)}")
            return
        if op.count not in self.counts:
            raise PolicyError(f"m={op.count} not in count grid {list(self.counts)}")
        if op.size not in self.sizes:
            raise PolicyError(f"{op.kind.size_letter}={op.size} not in size grid {list(self.sizes)}")

    def check_policy(self, policy: Policy, any_length: bool = False) -> None:
        if not any_length and len(policy) != self.policy_length:
            raise PolicyError(f"expected {self.policy_length} operations, got {len(policy)}")
        for i, op in enumerate(policy.ops):
            try:
                self.check_op(op)
            except PolicyError as exc:
                raise PolicyError(f"operation {i + 1}: {exc}") from None
        if self.distinct and len({op.kind for op in policy.ops}) != len(policy):
            raise PolicyError("repeated operation kinds are not allowed in this search space")


def default_search_space() -> SearchSpace:
    return SearchSpace()


_TERM = re.compile(r"^\s*([A-Za-z]+)\s*\((.*)\)\s*$")


def _parse_term(term: str, position: int) -> OperationSpec:
    m = _TERM.match(term)
    if m is None:
        raise PolicyError(f"operation {position}: cannot parse {term.strip()!r}")
    name, body = m.groups()
    kind = _TOKEN_KINDS.get(name)
    if kind is None:
        raise PolicyError(f"operation {position}: unknown operation {name!r}")
    params = {}
    for item in filter(None, (s.strip() for s in body.split(","))):
        key, sep, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not re.fullmatch(r"\d+", value):
            raise PolicyError(f"operation {position}: bad parameter {item!r}")
        if key in params:
            raise PolicyError(f"operation {position}: duplicate parameter {key!r}")
        params[key] = int(value)
    expected = {"W"} if kind is OperationKind.TimeWarp else {"m", kind.size_letter}
    if set(params) != expected:
        raise PolicyError(
            f"operation {position}: {name} takes parameters {sorted(expected)}, got {sorted(params)}"
        )
    if kind is OperationKind.TimeWarp:
        return OperationSpec(kind, warp=params["W"])
    return OperationSpec(kind, count=params["m"], size=params[kind.size_letter])


def parse_policy(text: str, space: SearchSpace | None = None, any_length: bool = False) -> Policy:
    """Parse ``Op(k=v,...);Op(...);...`` into a :class:`Policy`.

    Values are checked against ``space`` (default grids when omitted). With
    ``any_length`` the operation count is not checked against
    ``space.policy_length``.
    """
    space = space or default_search_space()
    terms = text.strip().split(";")
    if terms and terms[-1].strip() == "":
        terms = terms[:-1]
    if not terms:
        raise PolicyError("empty policy")
    ops = []
    for i, term in enumerate(terms, start=1):
        op = _parse_term(term, i)
        try:
            space.check_op(op)
        except PolicyError as exc:
            raise PolicyError(f"operation {i}: {exc}") from None
        ops.append(op)
    policy = Policy(tuple(ops))
    space.check_policy(policy, any_length=any_length)
    return policy


def format_policy(p: Policy) -> str:
    return ";".join(str(op) for op in p.ops)

