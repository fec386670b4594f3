"""Coagulation rate families, envelope validation, and the p -> 0 reduction.

Every kernel is measured against the two-sided power-law envelope

    c1 * (x+y)^gamma * Phi(x/(x+y))  <=  K  <=  c2 * (x+y)^gamma * Phi(x/(x+y)),

with Phi(s) = s^-p (1-s)^-p and x = |alpha|, y = |beta|.  Stationary
injection states exist iff gamma + 2p < 1 (strict); the gate is checked by
:func:`existence_gate`.  :func:`reduce_to_p_zero` maps a kernel with p != 0
to an equivalent problem with a pure power envelope (p = 0) by weighting
the state with |alpha|^-p.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "KernelSpec",
    "ExistenceVerdict",
    "EnvelopeReport",
    "StateTransform",
    "SeparableTerm",
    "constant",
    "brownian",
    "product_powerlaw",
    "additive",
    "custom",
    "evaluate",
    "evaluate_many",
    "phi_envelope",
    "envelope_value",
    "validate_envelope",
    "existence_gate",
    "reduce_to_p_zero",
    "separable_terms",
]


class KernelEvaluationError(ValueError):
    """A kernel produced a non-positive or non-finite rate."""


@dataclass(frozen=True)
class KernelSpec:
    """Immutable description of a symmetric coagulation rate family.

    ``form`` selects the built-in shape; ``params`` are its parameters.
    ``gamma``/``p`` are the envelope exponents and ``c1 <= c2`` the declared
    envelope constants.  Custom forms carry a ``rate`` callable acting on a
    pair of d-vectors (real-valued vectors are allowed, so the same formula
    also serves the continuum polar form G(r, rho; theta, sigma)).
    """

    form: str
    gamma: float
    p: float
    c1: float
    c2: float
    params: tuple = ()
    rate: Callable[[np.ndarray, np.ndarray], float] | None = None
    base: "KernelSpec | None" = None

    def __post_init__(self) -> None:
        if not (self.c1 <= self.c2):
            raise ValueError(f"need c1 <= c2, got c1={self.c1}, c2={self.c2}")
        if self.c1 <= 0:
            raise ValueError("envelope constants must be positive")
        if not (math.isfinite(self.gamma) and math.isfinite(self.p)):
            raise ValueError("gamma and p must be finite")

    @property
    def gamma_plus_2p(self) -> float:
        return self.gamma + 2.0 * self.p


@dataclass(frozen=True)
class ExistenceVerdict:
    """Outcome of the stationary-solution existence gate."""

    gamma_plus_2p: float
    stationary_expected: bool

    def __post_init__(self) -> None:
        if self.stationary_expected != (self.gamma_plus_2p < 1.0):
            raise ValueError("verdict inconsistent with gamma + 2p < 1")


@dataclass(frozen=True)
class EnvelopeReport:
    """Result of sampling the two-sided envelope bound."""

    c1_tight: float
    c2_tight: float
    c1_declared: float
    c2_declared: float
    violations: tuple
    pairs_checked: int

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class StateTransform:
    """Pointwise state re-weighting n_alpha -> |alpha|^size_exponent n_alpha."""

    size_exponent: float

    def weights(self, lattice) -> np.ndarray:
        if self.size_exponent == 0.0:
            return np.ones(lattice.size)
        return np.power(lattice.sizes.astype(float), self.size_exponent)

    def apply(self, state):
        return dataclasses.replace(
            state, concentrations=state.concentrations * self.weights(state.lattice)
        )

    def invert(self, state):
        return dataclasses.replace(
            state, concentrations=state.concentrations / self.weights(state.lattice)
        )


@dataclass
class SeparableTerm:
    """One product term of K(a, b) = sum_t a_t(alpha) b_t(beta) w_t(|alpha+beta|).

    ``a``/``b`` are per-lattice-point factors; ``w`` is indexed by total size
    of the merged pair (length 2 n_max + 1) or None for a constant 1.
    """

    a: np.ndarray
    b: np.ndarray
    w: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Built-in forms


def constant(c: float = 1.0) -> KernelSpec:
    """Size-independent kernel K = c (gamma = 0, p = 0)."""
    if c <= 0:
        raise ValueError("constant kernel rate must be positive")
    return KernelSpec(form="constant", gamma=0.0, p=0.0, c1=c, c2=c, params=(float(c),))


def brownian(C: float = 1.0, v: tuple[float, ...] = (1.0,)) -> KernelSpec:
    """Diffusive kernel K = C (V(a)^-1/3 + V(b)^-1/3)(V(a)^1/3 + V(b)^1/3).

    V(alpha) = sum_j alpha_j v_j with per-species monomer volumes v.  Fits
    the envelope with gamma = 0, p = 1/3; the declared constants follow from
    the volume spread w = max(v)/min(v):
        c1 = C w^-1/3,   c2 = C 2^(4/3) w^1/3.
    """
    if C <= 0:
        raise ValueError("brownian kernel prefactor must be positive")
    vol = tuple(float(x) for x in v)
    if not vol or any(x <= 0 for x in vol):
        raise ValueError("brownian kernel needs positive monomer volumes")
    spread = max(vol) / min(vol)
    return KernelSpec(
        form="brownian",
        gamma=0.0,
        p=1.0 / 3.0,
        c1=C * spread ** (-1.0 / 3.0),
        c2=C * 2.0 ** (4.0 / 3.0) * spread ** (1.0 / 3.0),
        params=(float(C), vol),
    )


def product_powerlaw(gamma: float, p: float, prefactor: float = 1.0) -> KernelSpec:
    """Exact envelope kernel K = prefactor (x+y)^gamma Phi(x/(x+y))."""
    if prefactor <= 0:
        raise ValueError("product_powerlaw prefactor must be positive")
    return KernelSpec(
        form="product_powerlaw",
        gamma=float(gamma),
        p=float(p),
        c1=prefactor,
        c2=prefactor,
        params=(float(gamma), float(p), float(prefactor)),
    )


def additive(scale: float = 1.0) -> KernelSpec:
    """Additive kernel K = scale (x + y): gamma = 1, p = 0.

    Sits exactly on the non-existence boundary gamma + 2p = 1.
    """
    if scale <= 0:
        raise ValueError("additive kernel scale must be positive")
    return KernelSpec(
        form="additive", gamma=1.0, p=0.0, c1=scale, c2=scale, params=(float(scale),)
    )


def custom(
    rate: Callable[[np.ndarray, np.ndarray], float],
    gamma: float,
    p: float,
    c1: float,
    c2: float,
) -> KernelSpec:
    """Wrap a user rate callable with declared envelope parameters.

    ``rate(x, y)`` receives two length-d float vectors and returns a scalar.
    """
    return KernelSpec(form="custom", gamma=gamma, p=p, c1=c1, c2=c2, rate=rate)


def size_weighted(base: KernelSpec, exponent: float) -> KernelSpec:
    """K~(a, b) = K(a, b) (|a| |b|)^exponent, used by the p -> 0 reduction."""
    return KernelSpec(
        form="size_weighted",
        gamma=base.gamma + 2.0 * exponent,
        p=base.p - exponent,
        c1=base.c1,
        c2=base.c2,
        params=(float(exponent),),
        base=base,
    )


# ---------------------------------------------------------------------------
# Evaluation


def _counts(comp) -> np.ndarray:
    if hasattr(comp, "counts"):
        return np.asarray(comp.counts, dtype=float)
    return np.asarray(comp, dtype=float)


def evaluate(spec: KernelSpec, alpha, beta) -> float:
    """Rate K(alpha, beta) for a single pair; symmetric in its arguments."""
    a = _counts(alpha)
    b = _counts(beta)
    out = evaluate_many(spec, a[None, :], b[None, :])
    return float(out[0])


def evaluate_many(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Vectorized rates for broadcastable stacks of composition vectors.

    A and B have shape (..., d); built-in forms broadcast, custom callables
    fall back to a scalar loop.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if spec.form == "constant":
        (c,) = spec.params
        shape = np.broadcast_shapes(A.shape[:-1], B.shape[:-1])
        return np.full(shape, c)
    if spec.form == "additive":
        (scale,) = spec.params
        return scale * (A.sum(-1) + B.sum(-1))
    if spec.form == "brownian":
        C, vol = spec.params
        v = np.asarray(vol)
        va = A @ v
        vb = B @ v
        r = np.cbrt(va / vb)
        return C * (2.0 + r + 1.0 / r)
    if spec.form == "product_powerlaw":
        gamma, p, pref = spec.params
        return pref * envelope_value(gamma, p, A.sum(-1), B.sum(-1))
    if spec.form == "size_weighted":
        (q,) = spec.params
        base_val = evaluate_many(spec.base, A, B)
        return base_val * np.power(A.sum(-1) * B.sum(-1), q)
    if spec.form == "custom":
        return _evaluate_custom(spec, A, B)
    raise ValueError(f"unknown kernel form {spec.form!r}")


def _evaluate_custom(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    shape = np.broadcast_shapes(A.shape[:-1], B.shape[:-1])
    d = max(A.shape[-1], B.shape[-1])
    Ab = np.broadcast_to(A, shape + (d,)).reshape(-1, d)
    Bb = np.broadcast_to(B, shape + (d,)).reshape(-1, d)
    out = np.empty(len(Ab))
    for i in range(len(Ab)):
        val = float(spec.rate(Ab[i], Bb[i]))
        if not (val > 0.0 and math.isfinite(val)):
            raise KernelEvaluationError(
                f"custom kernel returned {val!r} for pair "
                f"({tuple(Ab[i])}, {tuple(Bb[i])})"
            )
        out[i] = val
    return out.reshape(shape)


def phi_envelope(s, p: float):
    """Phi(s) = s^-p (1-s)^-p, evaluated in log space near the endpoints."""
    s = np.asarray(s, dtype=float)
    return np.exp(-p * (np.log(s) + np.log1p(-s)))


def envelope_value(gamma: float, p: float, x, y):
    """(x+y)^gamma Phi(x/(x+y)) = exp((gamma+2p) log(x+y) - p log x - p log y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.exp(
        (gamma + 2.0 * p) * np.log(x + y) - p * np.log(x) - p * np.log(y)
    )


# ---------------------------------------------------------------------------
# Envelope validation


def _shell_representatives(d: int, s: int) -> list[tuple[int, ...]]:
    # Corners plus the most balanced split: the envelope extremes for the
    # built-in forms live at those compositions.
    reps = set()
    for j in range(d):
        comp = [0] * d
        comp[j] = s
        reps.add(tuple(comp))
    base, extra = divmod(s, d)
    if base > 0:
        comp = [base] * d
        for j in range(extra):
            comp[j] += 1
        reps.add(tuple(comp))
    return sorted(reps)


def validate_envelope(
    spec: KernelSpec,
    sample_count: int,
    n_max: int,
    d: int = 1,
    seed: int = 0,
    rel_tol: float = 1e-9,
) -> EnvelopeReport:
    """Check c1 <= K/envelope <= c2 on a deterministic pair sample.

    Scans all shell pairs up to min(n_max, 50) through per-shell
    representative compositions, then adds ``sample_count`` random pairs up
    to n_max.  Violations are data, not errors.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    pairs_a: list[tuple[int, ...]] = []
    pairs_b: list[tuple[int, ...]] = []
    s_cap = min(n_max, 50)
    reps = {s: _shell_representatives(d, s) for s in range(1, s_cap + 1)}
    for s in range(1, s_cap + 1):
        for t in range(s, s_cap + 1):
            for a in reps[s]:
                for b in reps[t]:
                    pairs_a.append(a)
                    pairs_b.append(b)
    rng = np.random.default_rng(seed)
    for _ in range(sample_count):
        sa, sb = rng.integers(1, n_max + 1, size=2)
        pairs_a.append(tuple(rng.multinomial(sa, np.full(d, 1.0 / d))))
        pairs_b.append(tuple(rng.multinomial(sb, np.full(d, 1.0 / d))))

    A = np.asarray(pairs_a, dtype=float)
    B = np.asarray(pairs_b, dtype=float)
    rates = evaluate_many(spec, A, B)
    env = envelope_value(spec.gamma, spec.p, A.sum(-1), B.sum(-1))
    ratio = rates / env
    lo = spec.c1 * (1.0 - rel_tol)
    hi = spec.c2 * (1.0 + rel_tol)
    bad = np.flatnonzero((ratio < lo) | (ratio > hi))
    violations = tuple(
        (tuple(int(x) for x in pairs_a[i]), tuple(int(x) for x in pairs_b[i]), float(ratio[i]))
        for i in bad[:100]
    )
    return EnvelopeReport(
        c1_tight=float(ratio.min()),
        c2_tight=float(ratio.max()),
        c1_declared=spec.c1,
        c2_declared=spec.c2,
        violations=violations,
        pairs_checked=len(pairs_a),
    )


def existence_gate(spec: KernelSpec) -> ExistenceVerdict:
    """Stationary injection solutions are expected iff gamma + 2p < 1 (strict)."""
    g2p = spec.gamma_plus_2p
    return ExistenceVerdict(gamma_plus_2p=g2p, stationary_expected=bool(g2p < 1.0))


def reduce_to_p_zero(spec: KernelSpec) -> tuple[KernelSpec, StateTransform]:
    """Map K to K~(a,b) = K(a,b) |a|^p |b|^p with the state weight |alpha|^-p.

    The reduced kernel has exponents (gamma + 2p, 0) and keeps the declared
    envelope constants; stationary states map to stationary states under the
    returned transform.
    """
    if spec.p == 0.0:
        return spec, StateTransform(0.0)
    transform = StateTransform(-spec.p)
    if spec.form == "product_powerlaw":
        _, _, pref = spec.params
        return product_powerlaw(spec.gamma_plus_2p, 0.0, pref), transform
    return size_weighted(spec, spec.p), transform


# ---------------------------------------------------------------------------
# Separable structure for the fast dynamics path


def separable_terms(spec: KernelSpec, lattice) -> list[SeparableTerm] | None:
    """Product decomposition of a built-in kernel over a given lattice.

    Returns None for kernels without one (custom forms); callers then fall
    back to the shell-blocked O(M^2) path.
    """
    sizes = lattice.sizes.astype(float)
    if spec.form == "constant":
        (c,) = spec.params
        ones = np.ones(lattice.size)
        return [SeparableTerm(a=c * ones, b=ones)]
    if spec.form == "additive":
        (scale,) = spec.params
        ones = np.ones(lattice.size)
        return [
            SeparableTerm(a=scale * sizes, b=ones),
            SeparableTerm(a=scale * ones, b=sizes),
        ]
    if spec.form == "brownian":
        C, vol = spec.params
        v = np.asarray(vol)
        if len(v) != lattice.d:
            raise ValueError(
                f"brownian kernel has {len(v)} monomer volumes, lattice d={lattice.d}"
            )
        V = lattice.compositions @ v
        cbrt = np.cbrt(V)
        ones = np.ones(lattice.size)
        return [
            SeparableTerm(a=2.0 * C * ones, b=ones),
            SeparableTerm(a=C * cbrt, b=1.0 / cbrt),
            SeparableTerm(a=C / cbrt, b=cbrt),
        ]
    if spec.form == "product_powerlaw":
        gamma, p, pref = spec.params
        totals = np.arange(2 * lattice.n_max + 1, dtype=float)
        w = np.zeros_like(totals)
        w[1:] = np.power(totals[1:], gamma + 2.0 * p)
        factor = np.power(sizes, -p)
        return [SeparableTerm(a=pref * factor, b=factor.copy(), w=w)]
    if spec.form == "size_weighted":
        (q,) = spec.params
        inner = separable_terms(spec.base, lattice)
        if inner is None:
            return None
        boost = np.power(sizes, q)
        return [
            SeparableTerm(a=t.a * boost, b=t.b * boost, w=t.w) for t in inner
        ]
    return None
