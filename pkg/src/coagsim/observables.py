"""Size-space observables: flux surfaces, shell scaling, and tail bounds.

The central object is the flux A_j(R): the rate at which species-j monomers
cross the size surface |x| = R inside coagulation events, a pair (alpha,
beta) contributing alpha_j K n_alpha n_beta exactly when |alpha| <= R <
|alpha| + |beta|.  At stationarity the flux plateaus at the injection vector
for R between the source support and the truncation scale.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels as _kernels
from ._artifacts import write_csv
from .dynamics import PopulationState, SourceSpec
from .kernels import KernelSpec
from .lattice import shell_sum

__all__ = [
    "FluxCurve",
    "ScalingFit",
    "BoundCheckReport",
    "TailBoundResult",
    "injection_vector",
    "flux",
    "fit_shell_scaling",
    "two_sided_bound_check",
    "calibrate_bound_constants",
    "tail_bound_from_shells",
    "write_flux_csv",
    "write_scaling_csv",
    "write_bound_csv",
]


@dataclass(frozen=True)
class FluxCurve:
    """Per-species flux across a family of size surfaces."""

    radii: np.ndarray
    flux: np.ndarray  # shape (len(radii), d)

    def __post_init__(self) -> None:
        radii = np.asarray(self.radii, dtype=float)
        flux = np.atleast_2d(np.asarray(self.flux, dtype=float))
        if radii.ndim != 1 or flux.shape[0] != radii.size:
            raise ValueError("flux rows must align with radii")
        if radii.size and (np.any(radii <= 0) or np.any(np.diff(radii) <= 0)):
            raise ValueError("radii must be positive and strictly increasing")
        if not np.all(np.isfinite(flux)) or np.any(flux < 0):
            raise ValueError("flux entries must be finite and non-negative")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "flux", flux)

    @property
    def total(self) -> np.ndarray:
        return self.flux.sum(axis=1)

    def plateau_deviation(self, target: np.ndarray) -> float:
        """Largest relative deviation of any component from the target vector."""
        target = np.asarray(target, dtype=float)
        return float(np.max(np.abs(self.flux - target) / np.abs(target)))


@dataclass(frozen=True)
class ScalingFit:
    """Log-log fit of the shell average (1/z) * mass in [b z, z]."""

    exponent: float
    exponent_stderr: float
    prefactor: float
    fit_range: tuple[float, float]
    predicted_exponent: float
    sample_z: tuple[float, ...] = ()
    sample_average: tuple[float, ...] = ()


@dataclass(frozen=True)
class BoundCheckReport:
    """Shell-by-shell verdicts for the two-sided envelope of the shell average."""

    b: float
    c1: float
    c2: float
    j0_norm: float
    gamma: float
    rows: tuple[tuple[int, float, float, float, bool], ...]  # (z, lower, value, upper, ok)

    @property
    def violations(self) -> tuple[tuple[int, float, float, float, bool], ...]:
        return tuple(r for r in self.rows if not r[4])

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class TailBoundResult:
    """Outcome of transporting a shell-average bound to an interval mass bound."""

    holds: bool
    module_constant: float
    measured_constant: float
    mass: float
    comparison_integral: float


def injection_vector(source: SourceSpec) -> tuple[np.ndarray, float]:
    """J0_j = sum_alpha s_alpha alpha_j, and |J0| = sum_j J0_j."""
    if not source.entries:
        raise ValueError("empty source has no injection vector")
    j0 = np.zeros(source.d)
    for comp, rate in source.entries:
        j0 += rate * np.asarray(comp.counts, dtype=float)
    return j0, float(j0.sum())


# ---------------------------------------------------------------------------
# Flux


def _pair_flux_table(state: PopulationState, kernel: KernelSpec) -> np.ndarray:
    """T[r-1, p-1, j] = sum over |alpha| = r, |beta| = p of alpha_j K n n."""
    lattice = state.lattice
    n = state.concentrations
    n_max, d = lattice.n_max, lattice.d
    idx = lattice.shell_starts[1 : n_max + 1]
    terms = _kernels.separable_terms(kernel, lattice)
    table = np.zeros((n_max, n_max, d))
    if terms is not None:
        sizes = np.arange(2, 2 * n_max + 1)
        for t in terms:
            an = t.a * n
            # P[r, j]: species-weighted shell sums of the left factor.
            P = np.add.reduceat(lattice.compositions * an[:, None], idx, axis=0)
            Q = np.add.reduceat(t.b * n, idx)
            outer = P[:, None, :] * Q[None, :, None]
            if t.w is not None:
                r = np.arange(1, n_max + 1)
                outer = outer * t.w[r[:, None] + r[None, :]][:, :, None]
            table += outer
        return table
    comps = lattice.compositions
    for s in range(1, n_max + 1):
        rs = lattice.shell_range(s)
        A = comps[rs.start : rs.stop]
        ns = n[rs.start : rs.stop]
        if not np.any(ns):
            continue
        for t in range(1, n_max + 1):
            rt = lattice.shell_range(t)
            nt = n[rt.start : rt.stop]
            if not np.any(nt):
                continue
            B = comps[rt.start : rt.stop]
            K = _kernels.evaluate_many(
                kernel, A[:, None, :].astype(float), B[None, :, :].astype(float)
            )
            row_tot = (K * nt[None, :]).sum(axis=1) * ns
            table[s - 1, t - 1] = row_tot @ A
    return table


def flux(state: PopulationState, kernel: KernelSpec, radii) -> FluxCurve:
    """Flux curve A_j(R) over the given surfaces.

    Pairs are counted once in each order, so a pair with both members below
    R contributes the crossing monomers of both; this makes A_j(R) telescope
    exactly to the injection vector at stationarity.
    """
    lattice = state.lattice
    radii = np.asarray(sorted(float(R) for R in radii))
    if radii.size == 0:
        raise ValueError("no radii given")
    if radii[0] <= 0 or radii[-1] > lattice.n_max:
        raise ValueError(f"radii must lie in (0, n_max={lattice.n_max}]")
    if radii[-1] > lattice.n_max / 2:
        warnings.warn(
            f"flux surface R = {radii[-1]:g} is within a factor 2 of "
            f"n_max = {lattice.n_max}: truncation biases the flux",
            stacklevel=2,
        )
    table = _pair_flux_table(state, kernel)
    n_max = lattice.n_max
    r = np.arange(1, n_max + 1)
    out = np.empty((radii.size, lattice.d))
    for i, R in enumerate(radii):
        mask = (r[:, None] <= R) & (r[:, None] + r[None, :] > R)
        out[i] = np.tensordot(mask, table, axes=([0, 1], [0, 1]))
    return FluxCurve(radii=radii, flux=out)


# ---------------------------------------------------------------------------
# Shell scaling


def shell_average(state: PopulationState, z: float, b: float = 0.5) -> float:
    """(1/z) times the number of clusters with size in [b z, z]."""
    if not 0.0 < b < 1.0:
        raise ValueError("b must lie in (0, 1)")
    return shell_sum(state, b * z, z) / z


def fit_shell_scaling(
    state: PopulationState,
    b: float = 0.5,
    fit_range: tuple[float, float] | None = None,
    gamma: float = 0.0,
) -> ScalingFit:
    """Least-squares slope of log shell-average against log z.

    Samples geometrically spaced z inside ``fit_range`` (default: 4 up to
    n_max / 2) and compares the fitted exponent with the stationary
    prediction -(3 + gamma) / 2.
    """
    if not 0.0 < b < 1.0:
        raise ValueError("b must lie in (0, 1)")
    n_max = state.lattice.n_max
    if fit_range is None:
        fit_range = (4.0, n_max / 2.0)
    lo, hi = float(fit_range[0]), float(fit_range[1])
    if not 1.0 <= lo < hi <= n_max:
        raise ValueError(f"fit range {fit_range} outside the resolved lattice")
    if hi / lo < 2.0:
        raise ValueError("insufficient dynamic range: fit range spans < one octave")
    count = max(6, int(round(12 * math.log10(hi / lo))) + 1)
    zs = np.geomspace(lo, hi, count)
    avgs = np.array([shell_average(state, z, b) for z in zs])
    usable = avgs > 0
    if usable.sum() < 5:
        raise ValueError(
            f"insufficient dynamic range: only {int(usable.sum())} non-empty "
            "shell samples"
        )
    x = np.log(zs[usable])
    y = np.log(avgs[usable])
    (slope, intercept), cov = np.polyfit(x, y, 1, cov=True)
    return ScalingFit(
        exponent=float(slope),
        exponent_stderr=float(np.sqrt(max(cov[0, 0], 0.0))),
        prefactor=float(np.exp(intercept)),
        fit_range=(lo, hi),
        predicted_exponent=-(3.0 + gamma) / 2.0,
        sample_z=tuple(float(z) for z in zs[usable]),
        sample_average=tuple(float(a) for a in avgs[usable]),
    )


def two_sided_bound_check(
    state: PopulationState,
    b: float,
    c1: float,
    c2: float,
    j0_norm: float,
    gamma: float = 0.0,
    support_bound: float = 1.0,
) -> BoundCheckReport:
    """Check c2 sqrt|J0| z^-(3+gamma)/2 <= shell average <= c1 sqrt|J0| (...)
    on every integer shell z > support_bound / b; violations are data."""
    if not (c1 >= c2 > 0):
        raise ValueError("need c1 >= c2 > 0")
    if not 0.0 < b < 1.0:
        raise ValueError("b must lie in (0, 1)")
    n_max = state.lattice.n_max
    z_start = int(math.floor(support_bound / b)) + 1
    rows = []
    root = math.sqrt(j0_norm)
    for z in range(z_start, n_max + 1):
        value = shell_average(state, float(z), b)
        envelope = root * z ** (-(3.0 + gamma) / 2.0)
        lower = c2 * envelope
        upper = c1 * envelope
        slack = 1e-12 * envelope * max(c1, 1.0)
        ok = (lower - slack) <= value <= (upper + slack)
        rows.append((z, lower, value, upper, bool(ok)))
    return BoundCheckReport(
        b=b, c1=c1, c2=c2, j0_norm=j0_norm, gamma=gamma, rows=tuple(rows)
    )


def calibrate_bound_constants(
    state: PopulationState,
    b: float = 0.5,
    j0_norm: float = 1.0,
    gamma: float = 0.0,
    support_bound: float = 1.0,
    z_range: tuple[float, float] | None = None,
    margin: float = 1.02,
) -> tuple[float, float, tuple[int, int]]:
    """Empirical sandwich constants (C1, C2) for the shell-average bounds.

    The theory fixes only the exponent; the constants are measured from the
    state over ``z_range`` (default: the central geometric decade between
    the injection scale and the truncation scale) and padded by ``margin``.
    Returns (C1, C2, (z_lo, z_hi)) with C1 the upper and C2 the lower
    constant on that window.
    """
    if margin < 1.0:
        raise ValueError("margin must be >= 1")
    n_max = state.lattice.n_max
    z_min = int(math.floor(support_bound / b)) + 1
    if z_range is None:
        center = math.sqrt(z_min * n_max)
        z_lo = max(z_min, int(math.floor(center / math.sqrt(10.0))))
        z_hi = min(n_max, int(math.ceil(center * math.sqrt(10.0))))
    else:
        z_lo = max(z_min, int(math.floor(z_range[0])))
        z_hi = min(n_max, int(math.ceil(z_range[1])))
    if z_hi <= z_lo:
        raise ValueError("empty calibration window")
    root = math.sqrt(j0_norm)
    ratios = []
    for z in range(z_lo, z_hi + 1):
        value = shell_average(state, float(z), b)
        envelope = root * z ** (-(3.0 + gamma) / 2.0)
        if value > 0:
            ratios.append(value / envelope)
    if not ratios:
        raise ValueError("state vanishes on the calibration window")
    return max(ratios) * margin, min(ratios) / margin, (z_lo, z_hi)


def tail_bound_from_shells(
    state: PopulationState,
    b: float,
    c0: float,
    q: float,
    interval: tuple[float, float],
) -> TailBoundResult:
    """Transport a shell-average bound into a bound on the interval mass.

    Premise: shell_average(z) <= c0 z^q for every probe z in the interval
    (integer shells plus the geometric chain actually used by the covering
    argument).  Conclusion: total mass over the interval is at most
    C(b, q) * c0 * integral of x^q over the interval, with C given by the
    chain z_k = z_hi b^k whose shells [b z_k, z_k] tile the interval.
    """
    if not 0.0 < b < 1.0:
        raise ValueError("b must lie in (0, 1)")
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    z_lo, z_hi = float(interval[0]), float(interval[1])
    if not 1.0 <= z_lo < z_hi:
        raise ValueError(f"bad interval {interval}")

    chain = []
    z = z_hi
    while z > z_lo and not math.isclose(z, z_lo):
        chain.append(z)
        z *= b
    chain.append(z_lo)

    probes = sorted(
        set(range(int(math.ceil(z_lo)), int(math.floor(z_hi)) + 1)) | set(chain)
    )
    bad = []
    for z in probes:
        value = shell_average(state, float(z), b)
        bound = c0 * float(z) ** q
        if value > bound * (1.0 + 1e-12):
            bad.append(float(z))
    if bad:
        raise ValueError(
            "premise violated at z = "
            + ", ".join(f"{z:g}" for z in bad)
            + f": shell average exceeds c0 z^{q:g}"
        )

    if q == -1.0:
        integral = math.log(z_hi / z_lo)
    else:
        integral = (z_hi ** (q + 1.0) - z_lo ** (q + 1.0)) / (q + 1.0)
    chain_sum = sum(z ** (q + 1.0) for z in chain)
    module_constant = chain_sum / integral
    mass = shell_sum(state, z_lo, z_hi)
    comparison = c0 * integral
    measured = mass / comparison if comparison > 0 else math.inf
    holds = mass <= module_constant * comparison * (1.0 + 1e-12)
    return TailBoundResult(
        holds=bool(holds),
        module_constant=float(module_constant),
        measured_constant=float(measured),
        mass=float(mass),
        comparison_integral=float(comparison),
    )


# ---------------------------------------------------------------------------
# CSV emission


def write_flux_csv(curve: FluxCurve, path, config: dict | None = None) -> None:
    d = curve.flux.shape[1]
    fields = ["R"] + [f"A_{j + 1}" for j in range(d)] + ["sum"]
    rows = [
        [R] + list(curve.flux[i]) + [curve.total[i]] for i, R in enumerate(curve.radii)
    ]
    write_csv(path, fields, rows, config)


def write_scaling_csv(fit: ScalingFit, path, config: dict | None = None) -> None:
    rows = [
        [z, avg, fit.prefactor * z**fit.predicted_exponent]
        for z, avg in zip(fit.sample_z, fit.sample_average)
    ]
    write_csv(path, ["z", "shell_average", "predicted"], rows, config)


def write_bound_csv(report: BoundCheckReport, path, config: dict | None = None) -> None:
    write_csv(path, ["z", "lower", "value", "upper", "ok"], report.rows, config)
