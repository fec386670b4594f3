"""Discrete coagulation balance with injection: RHS, integration, weak form.

The evolved quantity is the dense concentration vector n_alpha over the
truncated lattice.  Each composition gains from ordered splittings
beta + (alpha - beta) = alpha at half the pair rate, loses by merging with
any partner, and receives the injection rates.  Merges whose product falls
beyond n_max remove both reactants and credit every constituent monomer to
the per-species boundary outflux (absorbing truncation), so at stationarity
the outflux vector balances the injection vector exactly.
"""

from __future__ import annotations

import logging
import math
import time as _time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.signal

from . import kernels as _kernels
from .kernels import KernelSpec
from .lattice import Composition, LatticeIndex

__all__ = [
    "PopulationState",
    "SourceSpec",
    "SteadyStateReport",
    "DivergenceError",
    "rhs",
    "integrate_to_steady_state",
    "weak_form_residual",
    "bundled_test_functions",
    "save_checkpoint",
    "load_checkpoint",
    "export_state_csv",
]

logger = logging.getLogger(__name__)

#: Blow-up guard: lattice number density above
#: ceiling_factor * (injected number rate) * max(t, 1) aborts the run.
DIVERGENCE_CEILING_FACTOR = 1e6

# Kernel-matrix block caching kicks in below this lattice size (slow path).
_BLOCK_CACHE_LIMIT = 2000


class DivergenceError(RuntimeError):
    """Non-finite intermediate during RHS evaluation."""

    def __init__(self, shell: int, message: str):
        super().__init__(message)
        self.shell = shell


@dataclass
class PopulationState:
    """Dense concentrations over a lattice at a given time."""

    lattice: LatticeIndex
    concentrations: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.concentrations, dtype=float)
        if arr.shape != (self.lattice.size,):
            raise ValueError(
                f"concentration array shape {arr.shape} does not match "
                f"lattice size {self.lattice.size}"
            )
        self.concentrations = arr

    def validate(self) -> None:
        n = self.concentrations
        if not np.all(np.isfinite(n)):
            raise ValueError("concentrations must be finite")
        if np.any(n < 0):
            worst = int(np.argmin(n))
            raise ValueError(
                f"negative concentration {n[worst]} at composition "
                f"{tuple(self.lattice.compositions[worst])}"
            )

    @classmethod
    def zero(cls, lattice: LatticeIndex, time: float = 0.0) -> "PopulationState":
        return cls(lattice, np.zeros(lattice.size), time)

    @classmethod
    def from_dict(
        cls, lattice: LatticeIndex, values: dict, time: float = 0.0
    ) -> "PopulationState":
        n = np.zeros(lattice.size)
        for comp, val in values.items():
            key = comp.counts if isinstance(comp, Composition) else tuple(comp)
            n[int(lattice.index_of(np.asarray(key)))] = val
        return cls(lattice, n, time)

    def mass_vector(self) -> np.ndarray:
        """Per-species monomer content sum_alpha alpha_j n_alpha."""
        return self.concentrations @ self.lattice.compositions

    def copy(self) -> "PopulationState":
        return PopulationState(self.lattice, self.concentrations.copy(), self.time)


@dataclass(frozen=True)
class SourceSpec:
    """Finite list of (composition, rate) injection entries."""

    entries: tuple[tuple[Composition, float], ...]

    def __post_init__(self) -> None:
        entries = tuple(
            (c if isinstance(c, Composition) else Composition(tuple(c)), float(r))
            for c, r in self.entries
        )
        object.__setattr__(self, "entries", entries)
        if any(r <= 0 for _, r in entries):
            raise ValueError("source rates must be positive")
        dims = {c.d for c, _ in entries}
        if len(dims) > 1:
            raise ValueError("source entries mix dimensions")

    @classmethod
    def from_pairs(cls, pairs) -> "SourceSpec":
        return cls(tuple((Composition(tuple(c)), float(r)) for c, r in pairs))

    @property
    def d(self) -> int:
        if not self.entries:
            raise ValueError("empty source has no dimension")
        return self.entries[0][0].d

    @property
    def support_bound(self) -> int:
        """L: the largest injected cluster size."""
        return max(c.size for c, _ in self.entries) if self.entries else 0

    @property
    def total_rate(self) -> float:
        return sum(r for _, r in self.entries)

    def vector(self, lattice: LatticeIndex) -> np.ndarray:
        vec = np.zeros(lattice.size)
        for comp, r in self.entries:
            if comp.d != lattice.d:
                raise ValueError(
                    f"source composition {comp.counts} has d={comp.d}, "
                    f"lattice d={lattice.d}"
                )
            if comp.size > lattice.n_max:
                raise ValueError(
                    f"source composition {comp.counts} exceeds n_max={lattice.n_max}"
                )
            vec[int(lattice.index_of(np.asarray(comp.counts)))] += r
        return vec

    def scaled(self, factor: float) -> "SourceSpec":
        return SourceSpec(tuple((c, r * factor) for c, r in self.entries))


@dataclass
class SteadyStateReport:
    """Outcome of a steady-state search."""

    converged: bool
    residual: float
    steps: int
    wall_time: float
    outflux_vector: np.ndarray
    status: str = "converged"  # converged | diverged | budget_exhausted
    message: str = ""
    final_time: float = 0.0


# ---------------------------------------------------------------------------
# RHS evaluation


@dataclass
class _RhsParts:
    dndt: np.ndarray
    outflux: np.ndarray
    gain: np.ndarray
    loss_rate: np.ndarray
    source_vec: np.ndarray


class _Evaluator:
    """Pre-computed machinery for repeated RHS calls on one (lattice, kernel).

    Separable kernels route through dense-grid convolution (gain) and
    per-shell moment sums (loss) at O(M log M); everything else takes a
    shell-blocked O(M^2) sweep.  Both share the absorbing-boundary outflux
    convention.
    """

    def __init__(self, lattice: LatticeIndex, kernel: KernelSpec):
        self.lattice = lattice
        self.kernel = kernel
        self.terms = _kernels.separable_terms(kernel, lattice)
        d, n_max = lattice.d, lattice.n_max
        if self.terms is not None:
            big_shape = (2 * n_max + 1,) * d
            idx = np.indices(big_shape, dtype=np.int32)
            size_grid = idx.sum(axis=0)
            self._big_shape = big_shape
            self._inside_flat = np.ravel_multi_index(
                tuple(lattice.compositions.T), big_shape
            )
            out_mask = (size_grid > n_max).ravel()
            self._out_flat = np.flatnonzero(out_mask)
            self._out_comps = idx.reshape(d, -1).T[self._out_flat].astype(float)
            # Grid corners with |zeta| > 2 n_max can never receive convolution
            # mass; clip their lookup index, they multiply zeros.
            size_flat = np.minimum(size_grid.ravel(), 2 * n_max)
            self._w_lookup = []
            for t in self.terms:
                if t.w is None:
                    self._w_lookup.append(None)
                else:
                    self._w_lookup.append(t.w[size_flat])
            # Per-shell moment machinery for the loss sum.
            self._shell_idx = lattice.shell_starts[1 : n_max + 1]
            self._hankel = {}
            for ti, t in enumerate(self.terms):
                if t.w is not None:
                    self._hankel[ti] = scipy.linalg.hankel(
                        t.w[2 : n_max + 2], t.w[n_max + 1 : 2 * n_max + 1]
                    )
            self._point_shell = lattice.sizes - 1
        else:
            self._blocks = None
            if lattice.size <= _BLOCK_CACHE_LIMIT:
                self._blocks = {}

    # -- separable fast path ------------------------------------------------

    def _pair_rate_grid(self, n: np.ndarray) -> np.ndarray:
        """Flat grid of ordered-pair rate mass landing at each total composition."""
        lattice = self.lattice
        total = np.zeros(int(np.prod(self._big_shape)))
        grid_shape = lattice.grid_shape
        for t, w_flat in zip(self.terms, self._w_lookup):
            U = np.zeros(grid_shape)
            V = np.zeros(grid_shape)
            U.ravel()[lattice.flat_indices] = t.a * n
            V.ravel()[lattice.flat_indices] = t.b * n
            conv = scipy.signal.convolve(U, V, mode="full", method="auto").ravel()
            if w_flat is None:
                total += conv
            else:
                total += w_flat * conv
        return total

    def _loss_rate_fast(self, n: np.ndarray) -> np.ndarray:
        lattice = self.lattice
        loss_rate = np.zeros(lattice.size)
        for ti, t in enumerate(self.terms):
            bn = t.b * n
            shell_sums = np.add.reduceat(bn, self._shell_idx)
            if t.w is None:
                loss_rate += t.a * shell_sums.sum()
            else:
                moments = self._hankel[ti] @ shell_sums
                loss_rate += t.a * moments[self._point_shell]
        return loss_rate

    def _parts_fast(self, n: np.ndarray, source_vec: np.ndarray) -> _RhsParts:
        pair_grid = self._pair_rate_grid(n)
        gain = 0.5 * pair_grid[self._inside_flat]
        # Tiny negative dust from the FFT route would violate positivity.
        np.maximum(gain, 0.0, out=gain)
        out_rates = pair_grid[self._out_flat]
        # FFT dust can leave a tiny negative aggregate; outflux is a rate.
        outflux = np.maximum(0.5 * (out_rates @ self._out_comps), 0.0)
        loss_rate = self._loss_rate_fast(n)
        dndt = gain - n * loss_rate + source_vec
        return _RhsParts(dndt, outflux, gain, loss_rate, source_vec)

    # -- shell-blocked general path ------------------------------------------

    def _kernel_block(self, s: int, t: int) -> np.ndarray:
        if self._blocks is not None and (s, t) in self._blocks:
            return self._blocks[(s, t)]
        lattice = self.lattice
        A = lattice.compositions[lattice.shell_range(s).start : lattice.shell_range(s).stop]
        B = lattice.compositions[lattice.shell_range(t).start : lattice.shell_range(t).stop]
        K = _kernels.evaluate_many(
            self.kernel, A[:, None, :].astype(float), B[None, :, :].astype(float)
        )
        if self._blocks is not None:
            self._blocks[(s, t)] = K
        return K

    def _parts_blocked(self, n: np.ndarray, source_vec: np.ndarray) -> _RhsParts:
        lattice = self.lattice
        n_max = lattice.n_max
        M = lattice.size
        gain = np.zeros(M)
        loss_rate = np.zeros(M)
        outflux = np.zeros(lattice.d)
        comps = lattice.compositions
        for s in range(1, n_max + 1):
            rs = lattice.shell_range(s)
            A = comps[rs.start : rs.stop]
            ns = n[rs.start : rs.stop]
            for t in range(1, n_max + 1):
                rt = lattice.shell_range(t)
                B = comps[rt.start : rt.stop]
                nt = n[rt.start : rt.stop]
                K = self._kernel_block(s, t)
                loss_rate[rs.start : rs.stop] += K @ nt
                flow = K * ns[:, None] * nt[None, :]
                if s + t <= n_max:
                    merged = (A[:, None, :] + B[None, :, :]).reshape(-1, lattice.d)
                    dest = lattice.index_of(merged)
                    np.add.at(gain, dest, 0.5 * flow.ravel())
                else:
                    outflux += 0.5 * (flow.sum(axis=1) @ A + flow.sum(axis=0) @ B)
        dndt = gain - n * loss_rate + source_vec
        return _RhsParts(dndt, outflux, gain, loss_rate, source_vec)

    def parts(self, n: np.ndarray, source_vec: np.ndarray) -> _RhsParts:
        if self.terms is not None:
            parts = self._parts_fast(n, source_vec)
        else:
            parts = self._parts_blocked(n, source_vec)
        bad = ~np.isfinite(parts.dndt)
        if np.any(bad):
            shell = int(self.lattice.sizes[int(np.argmax(bad))])
            raise DivergenceError(
                shell,
                f"non-finite derivative at shell |alpha| = {shell}: "
                "state has diverged",
            )
        return parts


_EVALUATOR_CACHE: dict[tuple, _Evaluator] = {}


def _evaluator(lattice: LatticeIndex, kernel: KernelSpec) -> _Evaluator:
    key = (id(lattice), id(kernel))
    ev = _EVALUATOR_CACHE.get(key)
    if ev is None or ev.lattice is not lattice or ev.kernel is not kernel:
        ev = _Evaluator(lattice, kernel)
        if len(_EVALUATOR_CACHE) > 16:
            _EVALUATOR_CACHE.clear()
        _EVALUATOR_CACHE[key] = ev
    return ev


def _source_vector(source: SourceSpec | None, lattice: LatticeIndex) -> np.ndarray:
    if source is None or not source.entries:
        return np.zeros(lattice.size)
    return source.vector(lattice)


def rhs(
    state: PopulationState, kernel: KernelSpec, source: SourceSpec | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Time derivative of every concentration plus the boundary outflux vector.

    The outflux vector holds, per species, the monomer rate carried out of
    the lattice by merges with |alpha + beta| > n_max (both reactants
    removed).  Raises :class:`DivergenceError` on non-finite intermediates,
    naming the shell where they appear.
    """
    parts = _evaluator(state.lattice, kernel).parts(
        state.concentrations, _source_vector(source, state.lattice)
    )
    return parts.dndt, parts.outflux


def _residual_from(parts: _RhsParts, n: np.ndarray, lattice: LatticeIndex) -> float:
    """Relative stationarity defect: per shell, sup |dndt| over the shell's
    dominant one-sided scale max(gain, loss, source); then sup over shells."""
    idx = lattice.shell_starts[1 : lattice.n_max + 1]
    num = np.maximum.reduceat(np.abs(parts.dndt), idx)
    loss = parts.loss_rate * n
    scale = np.maximum.reduceat(
        np.maximum(parts.gain, np.maximum(loss, parts.source_vec)), idx
    )
    mask = scale > 0.0
    if not np.any(mask):
        return 0.0 if float(np.max(num, initial=0.0)) == 0.0 else math.inf
    return float(np.max(num[mask] / scale[mask]))


# ---------------------------------------------------------------------------
# Steady-state search


def integrate_to_steady_state(
    initial: PopulationState,
    kernel: KernelSpec,
    source: SourceSpec | None,
    tol: float = 1e-8,
    max_time: float = 1e5,
    *,
    strategy: str = "auto",
    max_wall_time: float | None = None,
    divergence_ceiling: float | None = None,
    step_rtol: float = 1e-3,
    reproducible: bool = False,
) -> tuple[PopulationState, SteadyStateReport]:
    """Advance the balance equations until the relative residual falls below tol.

    Time marching uses an adaptive two-stage explicit scheme with
    positivity-preserving step rejection.  With ``strategy='auto'`` the
    marcher hands over to a damped cascade fixed-point accelerator once the
    residual is small, but only for kernels satisfying the existence
    condition gamma + 2p < 1: outside it no stationary injection solution
    exists, any fixed point of the truncated system is a cutoff artifact,
    and auto mode refuses to certify one.  ``'march'`` disables the
    accelerator everywhere; ``'fixed_point'`` opts in unconditionally (the
    honest way to inspect truncated fixed points in the non-existence
    regime).

    Outcomes: ``converged`` (residual <= tol, certified); ``diverged`` when
    the state blows past the mass ceiling, when the residual stops
    improving far above tolerance in the gamma + 2p >= 1 regime, or when a
    source-driven run in that regime meets tol anyway: the truncated
    lattice always has a fixed point, but no stationary injection solution
    exists in the untruncated system, so auto mode reports the regime
    rather than certifying a cutoff artifact.  ``budget_exhausted`` when
    the budget ends or the march hits its step-error floor in the
    existence regime.  The opt-in strategies report the raw dynamics
    without the certification gate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if strategy not in ("auto", "march", "fixed_point"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if source is not None and not source.entries and np.all(initial.concentrations == 0):
        source = None
    lattice = initial.lattice
    ev = _evaluator(lattice, kernel)
    src = _source_vector(source, lattice)
    total_rate = float(src.sum())

    n = initial.concentrations.copy()
    t = float(initial.time)
    t_end = t + max_time
    wall_start = _time.perf_counter()
    steps = 0

    parts = ev.parts(n, src)
    residual = _residual_from(parts, n, lattice)
    best_residual = residual
    history: list[tuple[float, float]] = [(t, residual)]

    def report(status: str, message: str = "") -> tuple[PopulationState, SteadyStateReport]:
        state = PopulationState(lattice, n, t)
        rep = SteadyStateReport(
            converged=status == "converged",
            residual=residual,
            steps=steps,
            wall_time=_time.perf_counter() - wall_start,
            outflux_vector=parts.outflux,
            status=status,
            message=message,
            final_time=t,
        )
        logger.info(
            "steady-state search: %s after %d steps, residual %.3e, t=%.3g",
            status,
            steps,
            residual,
            t,
        )
        return state, rep

    verdict = _kernels.existence_gate(kernel)
    # A truncated lattice always has a fixed point, but for gamma + 2p >= 1
    # the untruncated system provably has no stationary injection solution;
    # auto mode reports the regime instead of certifying a cutoff artifact.
    refuse_certification = (
        strategy == "auto" and total_rate > 0 and not verdict.stationary_expected
    )

    def certify(message: str = "") -> tuple[PopulationState, SteadyStateReport]:
        if refuse_certification:
            return report(
                "diverged",
                f"residual {residual:.3e} met tolerance on the truncated "
                f"lattice, but gamma + 2p = {verdict.gamma_plus_2p:.3g} >= 1 "
                "admits no stationary injection solution; rerun with "
                "strategy='fixed_point' to inspect the cutoff artifact",
            )
        return report("converged", message)

    if residual <= tol:
        return certify("initial state already stationary")

    ceiling = divergence_ceiling
    dt = _initial_step(parts, n, total_rate)
    # The accelerator certifies a stationary solution; auto mode only trusts
    # it where such solutions exist (gamma + 2p < 1).
    fp_enabled = strategy == "fixed_point" or (
        strategy == "auto" and verdict.stationary_expected
    )
    fp_next_attempt = residual / 2.0 if strategy == "auto" else residual
    # Even in fixed_point mode the cascade must be seeded by marching first;
    # the Picard map has nothing to iterate on an empty lattice.
    handoff = 1e-2 if strategy == "auto" else 0.5
    fp_stalls = 0

    while True:
        if max_wall_time is not None and _time.perf_counter() - wall_start > max_wall_time:
            return report("budget_exhausted", "wall-clock budget exhausted")
        if t >= t_end:
            status, msg = _classify_endpoint(history, tol, verdict)
            return report(status, msg)

        # Fixed-point acceleration once marching shows the state settling.
        if fp_enabled and residual <= max(handoff, tol) and residual <= fp_next_attempt:
            n_new, parts_new, res_new, fp_steps = _fixed_point_polish(
                ev, n, src, tol, residual
            )
            steps += fp_steps
            if res_new < residual:
                n, parts, residual = n_new, parts_new, res_new
                best_residual = min(best_residual, residual)
                history.append((t, residual))
                fp_stalls = 0
            else:
                fp_stalls += 1
            fp_next_attempt = residual / 4.0
            if residual <= tol:
                return certify()
            if strategy == "fixed_point" and fp_stalls >= 8:
                return report(
                    "budget_exhausted",
                    "fixed-point accelerator stalled above tolerance",
                )

        # One adaptive explicit step (two-stage, embedded error estimate).
        n, parts, dt, dt_taken = _march_step(ev, n, src, parts, dt, step_rtol)
        steps += 1
        t += dt_taken
        residual = _residual_from(parts, n, lattice)
        best_residual = min(best_residual, residual)
        history.append((t, residual))
        if residual <= tol:
            return certify()
        number_density = float(n.sum())
        limit = (
            ceiling
            if ceiling is not None
            else DIVERGENCE_CEILING_FACTOR * max(total_rate, 1e-300) * max(t, 1.0)
        )
        if number_density > limit:
            return report(
                "diverged",
                f"number density {number_density:.3e} crossed the ceiling {limit:.3e}",
            )
        if len(history) % 128 == 0 and _stagnating(history, tol):
            if verdict.stationary_expected:
                return report(
                    "budget_exhausted",
                    "march residual stopped improving above tolerance (step-"
                    "error floor); lower step_rtol or allow the fixed-point "
                    "accelerator",
                )
            return report(
                "diverged",
                "residual stopped improving far above tolerance; gamma + 2p "
                f"= {verdict.gamma_plus_2p:.3g} >= 1 admits no stationary "
                "injection solution, so the cascade cycles instead of "
                "settling",
            )
        if steps > 2_000_000:
            return report("budget_exhausted", "step budget exhausted")


def _initial_step(parts: _RhsParts, n: np.ndarray, total_rate: float) -> float:
    rate = float(parts.loss_rate.max(initial=0.0))
    if rate > 0.0:
        return 0.1 / rate
    if total_rate > 0.0:
        # Empty state: the first step only has to resolve the injection.
        return 0.1 / math.sqrt(max(total_rate, 1e-300))
    return 1.0


def _march_step(
    ev: _Evaluator,
    n: np.ndarray,
    src: np.ndarray,
    parts: _RhsParts,
    dt: float,
    step_rtol: float,
):
    """One adaptive Heun step; returns (n_new, parts_new, dt_next, dt_taken).

    ``dt_taken`` is falsy when the step was rejected (error too large or
    positivity violated); the caller retries with the returned dt_next.
    """
    f0 = parts.dndt
    for _ in range(60):
        y1 = n + dt * f0
        if np.any(y1 < 0.0):
            dt *= 0.5
            continue
        parts1 = ev.parts(y1, src)
        y2 = n + 0.5 * dt * (f0 + parts1.dndt)
        if np.any(y2 < 0.0):
            dt *= 0.5
            continue
        scale = np.maximum(np.abs(y2), np.max(y2, initial=0.0) * 1e-9) + 1e-300
        err = float(np.max(np.abs(y2 - y1) / scale)) / max(step_rtol, 1e-14)
        if err > 1.0:
            dt *= max(0.2, 0.9 / math.sqrt(err))
            continue
        parts2 = ev.parts(y2, src)
        dt_taken = dt
        dt_next = dt * min(3.0, max(0.3, 0.9 / math.sqrt(max(err, 1e-8))))
        return y2, parts2, dt_next, dt_taken
    raise DivergenceError(
        0, "time step collapsed: no positive step satisfies the error control"
    )


def _fixed_point_polish(
    ev: _Evaluator,
    n: np.ndarray,
    src: np.ndarray,
    tol: float,
    entry_residual: float,
    max_iters: int = 400,
):
    """Damped cascade iteration n <- (gain + source) / loss_rate.

    The gain at size s feeds only from sizes below s, so the update sweeps
    information down the cascade one rung per iteration; the loss rates are
    refreshed lazily from the running state.  Returns the best state seen.
    """
    lattice = ev.lattice
    best_n = n
    best_parts = ev.parts(n, src)
    best_res = entry_residual
    cur = n.copy()
    omega = 1.0
    res = entry_residual
    stall = 0
    for it in range(max_iters):
        parts = ev.parts(cur, src)
        res = _residual_from(parts, cur, lattice)
        if res < best_res:
            best_res, best_n, best_parts = res, cur.copy(), parts
            stall = 0
        else:
            stall += 1
        if res <= tol:
            return cur, parts, res, it + 1
        if stall > 25 or res > 10.0 * entry_residual:
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            target = np.where(
                parts.loss_rate > 0.0,
                (parts.gain + src) / parts.loss_rate,
                0.0,
            )
        proposal = cur + omega * (target - cur)
        trial_res = _residual_from(ev.parts(proposal, src), proposal, lattice)
        if trial_res > res and omega > 0.05:
            omega *= 0.5
            continue
        if trial_res < res:
            omega = min(1.0, omega * 1.4)
        cur = proposal
    return best_n, best_parts, best_res, max_iters


def _classify_endpoint(
    history: list[tuple[float, float]],
    tol: float,
    verdict: _kernels.ExistenceVerdict,
) -> tuple[str, str]:
    """Status when max_time runs out before the residual reaches tol."""
    final = history[-1][1]
    if not verdict.stationary_expected and _stagnating(history, tol):
        return (
            "diverged",
            f"time budget ended with residual {final:.3e} cycling; gamma + "
            f"2p = {verdict.gamma_plus_2p:.3g} >= 1 admits no stationary "
            "injection solution",
        )
    return (
        "budget_exhausted",
        f"max_time reached with residual {final:.3e} above tolerance {tol:.1e}",
    )


def _stagnating(history: list[tuple[float, float]], tol: float) -> bool:
    """True when the best residual has stopped improving far above tol.

    Compares the running minimum over the last third of the samples with
    the minimum before it; limit-cycling states (the non-existence regime)
    show no improvement, while slow healthy relaxations keep drifting down.
    The window is long so the cascade-filling transient, where the residual
    sits at exactly 1 until the front reaches the truncation scale, never
    triggers it.
    """
    if len(history) < 1536:
        return False
    res = np.array([r for _, r in history])
    cut = 2 * len(res) // 3
    recent_best = res[cut:].min()
    earlier_best = res[:cut].min()
    if earlier_best > 0.5:
        # Still in the filling transient; no verdict yet.
        return False
    if recent_best <= max(100.0 * tol, 1e-10):
        return False
    return recent_best > 0.9 * earlier_best


# ---------------------------------------------------------------------------
# Weak form


def _phi_values(phi: Callable, comps: np.ndarray) -> np.ndarray:
    vals = phi(comps)
    vals = np.asarray(vals, dtype=float)
    if vals.shape != (len(comps),):
        raise ValueError("test function must map (m, d) compositions to (m,) values")
    return vals


def weak_form_residual(
    state: PopulationState,
    kernel: KernelSpec,
    source: SourceSpec | None,
    phi: Callable,
    *,
    margin: int | None = None,
    relative: bool = False,
) -> float:
    """Stationary weak-form defect for a compactly supported test function.

    Evaluates  (1/2) sum_{a,b} K [phi(a+b) - phi(a) - phi(b)] n_a n_b
    + sum phi s  over all ordered lattice pairs (merges beyond the support
    contribute through the -phi(a) - phi(b) part).  With ``relative=True``
    the value is divided by the magnitude of the positive contributions, the
    natural scale of the identity.  Warns when the support reaches within
    ``margin`` of n_max, where truncation contaminates the balance.
    """
    lattice = state.lattice
    n = state.concentrations
    n_max = lattice.n_max
    if margin is None:
        margin = max(2, n_max // 8)
    phi_lat = _phi_values(phi, lattice.compositions)
    live = phi_lat != 0.0
    if np.any(live):
        support_max = int(lattice.sizes[live].max())
        if support_max > n_max - margin:
            warnings.warn(
                f"test function support reaches |alpha| = {support_max}, within "
                f"{margin} of n_max = {n_max}: truncation contaminates the weak form",
                stacklevel=2,
            )

    ev = _evaluator(lattice, kernel)
    src = _source_vector(source, lattice)
    parts = ev.parts(n, src)

    # Merge side: (1/2) sum over ordered pairs of phi(a + b) K n_a n_b,
    # with phi evaluated at merge targets beyond n_max as well, so the
    # identity is independent of the truncation bookkeeping in the RHS.
    if ev.terms is not None:
        pair_grid = ev._pair_rate_grid(n)
        merge_side = 0.5 * float(phi_lat @ pair_grid[ev._inside_flat])
        out_rates = pair_grid[ev._out_flat]
        hot = out_rates != 0.0
        if np.any(hot):
            phi_out = _phi_values(phi, ev._out_comps[hot].astype(int))
            merge_side += 0.5 * float(phi_out @ out_rates[hot])
    else:
        merge_side = float(phi_lat @ parts.gain)
        merge_side += _out_merge_sum(ev, n, phi)
    loss_side = float(phi_lat @ (n * parts.loss_rate))
    source_side = float(phi_lat @ src)
    value = merge_side - loss_side + source_side
    if not relative:
        return value
    scale = max(merge_side + max(source_side, 0.0), loss_side - min(source_side, 0.0))
    if scale <= 0.0:
        return 0.0 if value == 0.0 else math.inf
    return value / scale


def _out_merge_sum(ev: _Evaluator, n: np.ndarray, phi: Callable) -> float:
    """(1/2) sum of phi(a + b) K n_a n_b over pairs merging beyond n_max."""
    lattice = ev.lattice
    n_max = lattice.n_max
    comps = lattice.compositions
    total = 0.0
    for s in range(1, n_max + 1):
        rs = lattice.shell_range(s)
        A = comps[rs.start : rs.stop]
        ns = n[rs.start : rs.stop]
        for t in range(n_max + 1 - s, n_max + 1):
            rt = lattice.shell_range(t)
            B = comps[rt.start : rt.stop]
            nt = n[rt.start : rt.stop]
            K = ev._kernel_block(s, t)
            flow = K * ns[:, None] * nt[None, :]
            merged = (A[:, None, :] + B[None, :, :]).reshape(-1, lattice.d)
            total += 0.5 * float(_phi_values(phi, merged) @ flow.ravel())
    return total


def bundled_test_functions(lattice: LatticeIndex) -> list[tuple[str, Callable]]:
    """Five compactly supported test functions for weak-form checks.

    All vanish beyond n_max/2, well inside the truncation margin.  Each
    callable maps an (m, d) composition array to (m,) values.
    """
    n_max = lattice.n_max
    d = lattice.d
    hi = max(4.0, n_max / 2.0)

    def bump(center: float, width: float):
        def phi(comps: np.ndarray) -> np.ndarray:
            s = np.asarray(comps).sum(axis=1).astype(float)
            u = (s - center) / width
            out = np.zeros_like(s)
            inside = np.abs(u) < 1.0
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
            return out

        return phi

    def plateau(comps: np.ndarray) -> np.ndarray:
        s = np.asarray(comps).sum(axis=1).astype(float)
        edge = np.clip((hi - s) / (0.25 * hi), 0.0, 1.0)
        return edge * edge * (3.0 - 2.0 * edge)

    def tent(comps: np.ndarray) -> np.ndarray:
        s = np.asarray(comps).sum(axis=1).astype(float)
        return np.maximum(0.0, 1.0 - np.abs(s - hi / 2.0) / (hi / 2.0))

    center_bump = bump(hi / 2.0, hi / 2.0)

    def species_weighted(comps: np.ndarray) -> np.ndarray:
        arr = np.asarray(comps, dtype=float)
        s = arr.sum(axis=1)
        frac = arr[:, 0] / s if d > 1 else np.ones_like(s)
        return frac * center_bump(comps)

    return [
        ("radial_bump", center_bump),
        ("plateau", plateau),
        ("species_weighted_bump", species_weighted),
        ("narrow_bump", bump(hi / 3.0, hi / 6.0)),
        ("tent", tent),
    ]

# ---------------------------------------------------------------------------
# Checkpoint and CSV interfaces

_CHECKPOINT_MAGIC = b"COAGSTATE\n"
CHECKPOINT_FORMAT_VERSION = 1
#: Bumped whenever the lattice enumeration order changes; checkpoints written
#: under a different ordering cannot be reinterpreted and are rejected.
LATTICE_ORDERING_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or version-incompatible checkpoint file."""


def save_checkpoint(state: PopulationState, path, config: dict | None = None) -> None:
    """Write the state as a JSON header plus a flat float64 block.

    The header carries the lattice geometry, the simulation time, the
    ordering version of the composition enumeration, and the fully resolved
    run configuration when one is supplied.  Identical states yield byte
    identical files: keys are sorted and the payload is raw little-endian.
    """
    import json

    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "ordering_version": LATTICE_ORDERING_VERSION,
        "dimension": state.lattice.d,
        "n_max": state.lattice.n_max,
        "count": state.lattice.size,
        "time": state.time,
        "dtype": "<f8",
        "config": config,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = np.ascontiguousarray(state.concentrations, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "big"))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> tuple[PopulationState, dict]:
    """Read a checkpoint back into a state; returns (state, header)."""
    import json

    from .lattice import enumerate_lattice

    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        blob_len = int.from_bytes(fh.read(8), "big")
        try:
            header = json.loads(fh.read(blob_len))
        except ValueError as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
        for key in ("format_version", "ordering_version", "dimension", "n_max", "count"):
            if key not in header:
                raise CheckpointError(f"{path}: header missing {key!r}")
        if header["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: format version {header['format_version']} "
                f"(supported: {CHECKPOINT_FORMAT_VERSION})"
            )
        if header["ordering_version"] != LATTICE_ORDERING_VERSION:
            raise CheckpointError(
                f"{path}: lattice ordering version {header['ordering_version']} "
                f"(current: {LATTICE_ORDERING_VERSION})"
            )
        lattice = enumerate_lattice(header["dimension"], header["n_max"])
        if lattice.size != header["count"]:
            raise CheckpointError(
                f"{path}: header count {header['count']} does not match "
                f"lattice size {lattice.size}"
            )
        payload = fh.read(8 * lattice.size)
    if len(payload) != 8 * lattice.size:
        raise CheckpointError(f"{path}: truncated payload")
    n = np.frombuffer(payload, dtype="<f8").copy()
    state = PopulationState(lattice, n, float(header["time"]))
    state.validate()
    return state, header


def export_state_csv(state: PopulationState, path, config: dict | None = None) -> None:
    """Write (|alpha|, alpha_1..alpha_d, n_alpha) rows.

    A leading ``# config: {...}`` comment line carries the run configuration
    when given; the header row follows.
    """
    import csv
    import json

    lattice = state.lattice
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\r\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["size"] + [f"alpha_{j + 1}" for j in range(lattice.d)] + ["concentration"]
        )
        for row, size, value in zip(
            lattice.compositions, lattice.sizes, state.concentrations
        ):
            writer.writerow([int(size)] + [int(x) for x in row] + [repr(float(value))])
