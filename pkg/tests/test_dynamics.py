"""Right-hand side, steady-state search, weak form, and checkpoints."""

import hashlib
import json

import numpy as np
import pytest

from coagsim import dynamics, kernels, lattice, observables
from coagsim.dynamics import (
    CheckpointError,
    DivergenceError,
    PopulationState,
    SourceSpec,
    bundled_test_functions,
    export_state_csv,
    integrate_to_steady_state,
    load_checkpoint,
    rhs,
    save_checkpoint,
    weak_form_residual,
)

from conftest import fresh_state


def quadruple_loop_rhs(state, kernel, source=None):
    """Independent oracle: explicit loop over every ordered lattice pair."""
    lat = state.lattice
    n = state.concentrations
    dndt = np.zeros(lat.size)
    outflux = np.zeros(lat.d)
    comps = lat.compositions
    for i in range(lat.size):
        for j in range(lat.size):
            rate = kernels.evaluate(kernel, comps[i], comps[j]) * n[i] * n[j]
            dndt[i] -= rate
            merged = comps[i] + comps[j]
            if merged.sum() <= lat.n_max:
                dndt[lat.index_of(merged)] += 0.5 * rate
            else:
                outflux += 0.5 * rate * merged
    if source is not None:
        dndt += source.vector(lat)
    return dndt, outflux


def test_rhs_monomer_dimer_closed_form():
    # single monomer population, constant kernel: loss 1, dimer gain 1/2
    state = fresh_state(1, 4)
    state.concentrations[0] = 1.0
    dndt, outflux = rhs(state, kernels.constant(1.0))
    assert dndt[0] == pytest.approx(-1.0, rel=1e-14)
    assert dndt[1] == pytest.approx(0.5, rel=1e-14)
    assert np.all(dndt[2:] == 0.0)
    sizes = state.lattice.sizes.astype(float)
    assert float(sizes @ dndt) == pytest.approx(0.0, abs=1e-14)
    assert np.all(outflux == 0.0)


def test_rhs_source_adds_linearly():
    state = fresh_state(1, 4)
    state.concentrations[0] = 1.0
    sigma = 3.25
    dndt, _ = rhs(state, kernels.constant(1.0), SourceSpec((((1,), sigma),)))
    assert dndt[0] == pytest.approx(sigma - 1.0, rel=1e-14)


@pytest.mark.parametrize(
    "d,n_max,kern",
    [
        (2, 3, kernels.constant(1.0)),
        (2, 3, kernels.brownian(1.0, (1.0, 2.0))),
        (1, 6, kernels.additive(0.7)),
        (3, 3, kernels.product_powerlaw(0.4, 0.2, 1.3)),
    ],
)
def test_rhs_matches_quadruple_loop_oracle(d, n_max, kern):
    rng = np.random.default_rng(17)
    lat = lattice.LatticeIndex(d, n_max)
    src = SourceSpec((((1,) + (0,) * (d - 1), 2.0),))
    for _ in range(5):
        state = PopulationState(lat, rng.random(lat.size))
        got_d, got_o = rhs(state, kern, src)
        want_d, want_o = quadruple_loop_rhs(state, kern, src)
        np.testing.assert_allclose(got_d, want_d, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(got_o, want_o, rtol=1e-12, atol=1e-14)


def test_mass_conserved_without_truncation_events():
    # support on sizes <= n_max/2 so no merge can leave the lattice
    lat = lattice.LatticeIndex(2, 20)
    rng = np.random.default_rng(5)
    n = rng.random(lat.size)
    n[lat.sizes > 10] = 0.0
    state = PopulationState(lat, n)
    dndt, outflux = rhs(state, kernels.brownian(1.0, (1.0, 2.0)))
    comps = lat.compositions.astype(float)
    mass_rate = comps.T @ dndt
    throughput = float((np.abs(comps.T) @ np.abs(dndt)).max())
    # outflux must vanish up to fast-path convolution dust
    assert np.all(outflux >= 0.0)
    assert np.all(outflux <= 1e-12 * throughput)
    assert np.all(np.abs(mass_rate) <= 1e-12 * throughput)


def test_outflux_closes_the_species_mass_ledger():
    # d/dt (species mass) + outflux = injected mass rate, identically
    lat = lattice.LatticeIndex(2, 8)
    rng = np.random.default_rng(9)
    state = PopulationState(lat, rng.random(lat.size))
    src = SourceSpec((((1, 0), 2.0), ((0, 1), 1.0)))
    dndt, outflux = rhs(state, kernels.additive(1.0), src)
    comps = lat.compositions.astype(float)
    ledger = comps.T @ dndt + outflux
    throughput = float((np.abs(comps.T) @ np.abs(dndt)).max())
    np.testing.assert_allclose(ledger, [2.0, 1.0], atol=1e-12 * throughput)


def test_rhs_nonfinite_state_raises_named_shell():
    state = fresh_state(1, 16, fill=1e200)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError) as err:
            rhs(state, kernels.additive(1.0))
    assert err.value.shell >= 1
    assert "shell" in str(err.value)


def test_zero_source_zero_state_converges_immediately():
    state, report = integrate_to_steady_state(
        fresh_state(1, 8), kernels.constant(1.0), None
    )
    assert report.converged
    assert report.status == "converged"
    assert report.residual == 0.0
    assert report.steps == 0


def test_converged_run_meets_tolerance_and_mass_balance(small_run):
    report = small_run["report"]
    assert report.converged and report.status == "converged"
    assert report.residual <= 1e-8
    j0, _ = observables.injection_vector(small_run["source"])
    np.testing.assert_allclose(report.outflux_vector, j0, rtol=1e-6)
    assert np.all(small_run["state"].concentrations >= 0.0)


def test_march_strategy_converges_with_tight_steps():
    src = SourceSpec((((1,), 1.0),))
    state, report = integrate_to_steady_state(
        fresh_state(1, 16), kernels.constant(1.0), src,
        tol=1e-3, strategy="march", step_rtol=1e-5,
    )
    assert report.converged
    assert report.residual <= 1e-3


def test_auto_reports_nonexistence_regime_on_stagnation():
    src = SourceSpec((((1,), 1.0),))
    state, report = integrate_to_steady_state(
        fresh_state(1, 48), kernels.additive(1.0), src, tol=1e-8
    )
    assert report.status == "diverged"
    assert not report.converged
    assert "gamma + 2p" in report.message


def test_fixed_point_probes_the_truncated_fixed_point():
    # opt-in strategy reports the raw cutoff fixed point even at gamma+2p >= 1
    src = SourceSpec((((1,), 1.0),))
    state, report = integrate_to_steady_state(
        fresh_state(1, 32), kernels.additive(1.0), src,
        tol=1e-8, strategy="fixed_point",
    )
    assert report.converged
    assert report.residual <= 1e-8
    assert np.all(state.concentrations >= 0.0)


def test_auto_refuses_to_certify_cutoff_artifact():
    # hand auto a state that is stationary on the truncated lattice
    src = SourceSpec((((1,), 1.0),))
    kern = kernels.additive(1.0)
    probe, rep_fp = integrate_to_steady_state(
        fresh_state(1, 32), kern, src, tol=1e-10, strategy="fixed_point"
    )
    assert rep_fp.converged
    state, report = integrate_to_steady_state(probe, kern, src, tol=1e-8)
    assert report.status == "diverged"
    assert "fixed_point" in report.message


def test_divergence_ceiling_reported():
    src = SourceSpec((((1,), 1.0),))
    state, report = integrate_to_steady_state(
        fresh_state(1, 16), kernels.constant(1.0), src,
        tol=1e-12, divergence_ceiling=1e-6,
    )
    assert report.status == "diverged"
    assert "ceiling" in report.message


def test_invalid_strategy_rejected():
    with pytest.raises(ValueError):
        integrate_to_steady_state(
            fresh_state(1, 4), kernels.constant(1.0), None, strategy="magic"
        )


def test_reproducible_runs_are_bitwise_identical():
    src = SourceSpec((((1,), 1.0),))

    def run():
        state, _ = integrate_to_steady_state(
            fresh_state(1, 24), kernels.constant(1.0), src,
            tol=1e-9, reproducible=True,
        )
        return state

    a, b = run(), run()
    assert np.array_equal(a.concentrations, b.concentrations)
    assert a.time == b.time


def test_weak_form_zero_state_is_zero():
    state = fresh_state(2, 8)
    phi = lambda comps: np.ones(len(np.atleast_2d(comps)))
    assert weak_form_residual(state, kernels.constant(1.0), None, phi, margin=0) == 0.0


def test_weak_form_small_on_converged_state(small_run):
    state, kern, src = small_run["state"], small_run["kernel"], small_run["source"]
    for name, phi in bundled_test_functions(state.lattice):
        value = weak_form_residual(state, kern, src, phi, relative=True)
        assert abs(value) <= 1e-3, (name, value)


def test_weak_form_warns_near_truncation(small_run):
    state, kern = small_run["state"], small_run["kernel"]
    n_max = state.lattice.n_max

    def phi(comps):
        s = np.asarray(comps).sum(axis=1).astype(float)
        return np.where(s <= n_max, 1.0, 0.0)

    with pytest.warns(UserWarning, match="truncation"):
        weak_form_residual(state, kern, None, phi)


def test_weak_form_reproduces_flux_balance(small_run):
    # phi(a) = |a| 1_{|a| <= R}: weak value equals |J0| - total flux across R
    state, kern, src = small_run["state"], small_run["kernel"], small_run["source"]
    _, norm = observables.injection_vector(src)
    for R in (8.0, 12.0):
        def phi(comps, R=R):
            s = np.asarray(comps).sum(axis=1).astype(float)
            return np.where(s <= R, s, 0.0)

        value = weak_form_residual(state, kern, src, phi, margin=1)
        a_total = float(observables.flux(state, kern, [R]).flux.sum())
        assert value == pytest.approx(norm - a_total, abs=1e-12 * norm)


def test_bundled_test_functions_shape_and_support():
    lat = lattice.LatticeIndex(2, 32)
    funcs = bundled_test_functions(lat)
    assert len(funcs) == 5
    names = [name for name, _ in funcs]
    assert len(set(names)) == 5
    for name, phi in funcs:
        vals = phi(lat.compositions)
        assert vals.shape == (lat.size,)
        # compact support within half the lattice
        assert np.all(vals[lat.sizes > lat.n_max // 2] == 0.0), name
        assert np.all(np.isfinite(vals))


def test_checkpoint_roundtrip_is_exact(tmp_path):
    lat = lattice.LatticeIndex(2, 10)
    rng = np.random.default_rng(1)
    state = PopulationState(lat, rng.random(lat.size), time=3.75)
    cfg = {"dimension": 2, "n_max": 10, "note": "roundtrip"}
    path = tmp_path / "state.coagstate"
    save_checkpoint(state, path, cfg)
    back, header = load_checkpoint(path)
    assert np.array_equal(back.concentrations, state.concentrations)
    assert back.time == state.time
    assert back.lattice.d == 2 and back.lattice.n_max == 10
    assert header["config"] == cfg


def test_checkpoint_write_is_deterministic(tmp_path):
    lat = lattice.LatticeIndex(1, 12)
    state = PopulationState(lat, np.linspace(0.0, 1.0, lat.size))
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(state, p1, {"k": 1})
    save_checkpoint(state, p2, {"k": 1})
    h1 = hashlib.sha256(p1.read_bytes()).hexdigest()
    h2 = hashlib.sha256(p2.read_bytes()).hexdigest()
    assert h1 == h2


def test_checkpoint_rejects_corruption(tmp_path):
    lat = lattice.LatticeIndex(1, 5)
    state = PopulationState(lat, np.ones(lat.size))
    path = tmp_path / "state.coagstate"
    save_checkpoint(state, path)
    raw = bytearray(path.read_bytes())

    bad_magic = tmp_path / "magic.coagstate"
    bad_magic.write_bytes(b"NOTMAGIC!\n" + bytes(raw[10:]))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad_magic)

    truncated = tmp_path / "short.coagstate"
    truncated.write_bytes(bytes(raw[:-8]))
    with pytest.raises(CheckpointError):
        load_checkpoint(truncated)


def test_checkpoint_rejects_version_skew(tmp_path):
    lat = lattice.LatticeIndex(1, 5)
    state = PopulationState(lat, np.ones(lat.size))
    path = tmp_path / "state.coagstate"
    save_checkpoint(state, path)
    raw = path.read_bytes()
    magic = b"COAGSTATE\n"
    blob_len = int.from_bytes(raw[len(magic) : len(magic) + 8], "big")
    header = json.loads(raw[len(magic) + 8 : len(magic) + 8 + blob_len])
    header["format_version"] = 99
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    skewed = tmp_path / "skewed.coagstate"
    skewed.write_bytes(
        magic + len(blob).to_bytes(8, "big") + blob + raw[len(magic) + 8 + blob_len :]
    )
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(skewed)


def test_export_state_csv_layout(tmp_path):
    lat = lattice.LatticeIndex(2, 3)
    state = PopulationState(lat, np.arange(1.0, lat.size + 1))
    path = tmp_path / "state.csv"
    export_state_csv(state, path, {"run": "x"})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config: ")
    assert json.loads(lines[0][len("# config: "):]) == {"run": "x"}
    assert len(lines) == 2 + lat.size
    first = lines[2].split(",")
    # columns: |alpha|, alpha_1..alpha_d, n
    assert len(first) == 1 + lat.d + 1
