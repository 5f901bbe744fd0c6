import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import U45, window
from nfmusic.array_model import (
    ArrayConfig,
    Target,
    WidebandGrid,
    farfield_steering,
    fraunhofer_distance,
    nearfield_steering,
    phase_profile,
    spatial_steering,
    squint_map,
)
from nfmusic.errors import ConfigurationError, IdentifiabilityError
from nfmusic.estimator import (
    ALL_MODES,
    DEFAULT_EPS,
    Estimates,
    Mode,
    SpectrumGrid,
    check_identifiability,
    combined_spectrum,
    corrected_noise_subspace,
    estimator_mode_table,
    find_peaks,
    hypothesis_vectors,
    literal_spectrum,
    music_spectrum_point,
    parse_mode,
    refine_peaks,
    search_grid,
    squint_transform,
    subspaces_for,
)
from nfmusic.scene import (
    ObservationSet,
    generate_probe,
    random_combiner,
    synthesize_echo,
    transmit_power,
)

CFG128 = ArrayConfig(128, 300e9)
GRID8 = WidebandGrid.for_array(CFG128, 8, 30e9)
STEP_U, STEP_R = 0.002, 0.1


def simulate(targets, cfg=CFG128, grid=GRID8, sigma2=0.0, T=200, n_rf=8, seed=0):
    ss = np.random.SeedSequence(seed).spawn(3)
    bank = random_combiner(cfg, n_rf, ss[0])
    probe = generate_probe(cfg, grid, transmit_power(cfg, grid), T, n_rf, ss[1])
    return bank, synthesize_echo(targets, probe, bank, cfg, grid, sigma2, ss[2])


def local_grid(u, r, cfg=CFG128, half_u=25, half_r=15):
    d_f = fraunhofer_distance(cfg)
    return (window(u, half_u, STEP_U, -1.0, 1.0), window(r, half_r, STEP_R, 0.5, d_f))


@pytest.fixture(scope="module")
def desk_noiseless():
    return simulate([Target(U45, 5.0)])


class TestTransform:
    def test_unit_ratio_gives_ones(self):
        grid = WidebandGrid.for_array(CFG128, 3, 30e9)
        tau = squint_transform(0.3, 2.0, 2, CFG128, grid).tau
        np.testing.assert_allclose(tau, 1.0, atol=1e-12)

    @settings(max_examples=50)
    @given(st.floats(-0.99, 0.99), st.floats(0.5, 8.0), st.integers(1, 8))
    def test_exactness_and_modulus(self, u, r, m):
        tau = squint_transform(u, r, m, CFG128, GRID8).tau
        np.testing.assert_allclose(np.abs(tau), 1.0, atol=1e-12)
        lhs = tau * nearfield_steering(u, r, CFG128.carrier, CFG128).entries
        rhs = spatial_steering(u, r, GRID8.ratios[m - 1], CFG128).entries
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_reference_example(self):
        m = 8  # 315 GHz
        assert GRID8.frequencies[m - 1] == pytest.approx(315e9)
        tau = squint_transform(0.7071, 10.0, m, CFG128, GRID8).tau
        loc = squint_map(0.7071, 10.0, GRID8.ratios[m - 1])
        assert (loc.direction, loc.range) == pytest.approx((0.67343, 11.476), abs=1e-3)
        b = nearfield_steering(loc.direction, loc.range, CFG128.carrier, CFG128).entries
        a = nearfield_steering(0.7071, 10.0, CFG128.carrier, CFG128).entries
        assert np.max(np.abs(tau * a - b)) < 1e-13

    def test_subcarrier_frequency_variant_is_constant_phase(self):
        # with the squinted vector taken at f_m the transform carries no squint at all
        m = 8
        f = GRID8.frequencies[m - 1]
        tau = squint_transform(0.7071, 10.0, m, CFG128, GRID8, spatial_freq=f).tau
        a = nearfield_steering(0.7071, 10.0, CFG128.carrier, CFG128).entries
        loc = squint_map(0.7071, 10.0, GRID8.ratios[m - 1])
        np.testing.assert_allclose(tau * a, nearfield_steering(loc.direction, loc.range, f, CFG128).entries,
                                   atol=1e-12)
        np.testing.assert_allclose(tau, tau[0], atol=1e-9)

    def test_index_checked(self):
        with pytest.raises(IndexError):
            squint_transform(0.1, 1.0, 9, CFG128, GRID8)


class TestCorrectedSubspace:
    def test_reduces_to_noise_basis(self, rng):
        U = np.linalg.qr(rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4)))[0]
        np.testing.assert_allclose(corrected_noise_subspace(np.ones(6), np.eye(6), U), U)

    def test_shape(self, desk_noiseless):
        bank, obs = simulate([Target(0.2, 3.0), Target(-0.4, 2.0)], T=20)
        pair = subspaces_for(obs, 2)[0]
        tau = squint_transform(0.2, 3.0, 1, CFG128, GRID8)
        assert corrected_noise_subspace(tau, bank, pair.noise).shape == (128, 126)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            corrected_noise_subspace(np.ones(4), np.eye(5), np.ones((5, 2)))

    def test_orthogonal_at_truth(self, desk_noiseless):
        bank, obs = desk_noiseless
        a = nearfield_steering(U45, 5.0, CFG128.carrier, CFG128).entries
        W = bank.matrix
        for m, pair in enumerate(subspaces_for(obs, 1)):
            V = corrected_noise_subspace(squint_transform(U45, 5.0, m + 1, CFG128, GRID8), W, pair.noise)
            assert np.linalg.norm(a.conj() @ V) < 1e-8


class TestSpectrumPoint:
    def test_clamp(self):
        cfg = ArrayConfig(4, 300e9)
        a = nearfield_steering(0.2, 1.0, cfg.carrier, cfg).entries
        V = np.linalg.qr(np.column_stack([a, np.eye(4)[:, :3]]))[0][:, 1:]
        assert music_spectrum_point(0.2, 1.0, [V, V, V], cfg) == pytest.approx(3 / DEFAULT_EPS)

    def test_full_projection(self):
        cfg = ArrayConfig(4, 300e9)
        a = nearfield_steering(0.2, 1.0, cfg.carrier, cfg).entries
        V = a[:, None]
        assert music_spectrum_point(0.2, 1.0, [V, V], cfg) == pytest.approx(2.0)


CFG32 = ArrayConfig(32, 300e9)
GRID4 = WidebandGrid.for_array(CFG32, 4, 30e9)


@pytest.fixture(scope="module")
def scene():
    return simulate([Target(0.5, 1.0), Target(-0.3, 1.5)], CFG32, GRID4, sigma2=0.01, T=64, seed=4)


class TestBatchedSpectrum:
    cfg = CFG32
    grid = GRID4

    @pytest.mark.parametrize("mode", [Mode.PROPOSED, Mode.NF_NOCAL, Mode.NF_ORACLE])
    def test_matches_literal(self, scene, mode):
        bank, obs = scene
        subs = subspaces_for(obs, 2)
        us, rs = np.linspace(-0.9, 0.9, 11), np.array([0.7, 1.0, 1.6])
        fast = combined_spectrum(obs, bank, self.cfg, self.grid, 2, us, rs, mode, subspaces=subs)
        slow = literal_spectrum(subs, bank, self.cfg, self.grid, us, rs, mode)
        np.testing.assert_allclose(fast.values, slow, rtol=1e-9)

    @pytest.mark.parametrize("mode", [Mode.FF_NOCAL, Mode.FF_ORACLE])
    def test_far_field_direct(self, scene, mode):
        bank, obs = scene
        subs = subspaces_for(obs, 2)
        us = np.linspace(-0.9, 0.9, 7)
        fast = combined_spectrum(obs, bank, self.cfg, self.grid, 2, us, None, mode, subspaces=subs)
        assert fast.ranges is None and fast.values.shape == (7,)
        W = bank.matrix
        for i, u in enumerate(us):
            total = 0.0
            for m, eta in enumerate(self.grid.ratios):
                uu = u if mode is Mode.FF_NOCAL else eta * u
                a = farfield_steering(uu, self.cfg.carrier, self.cfg).entries
                total += 1 / max(np.linalg.norm((W @ subs[m].noise).conj().T @ a) ** 2, DEFAULT_EPS)
            assert fast.values[i] == pytest.approx(total, rel=1e-9)

    def test_chunk_size_only_affects_rounding(self, scene):
        bank, obs = scene
        us, rs = np.linspace(-0.9, 0.9, 13), np.linspace(0.6, 2.0, 5)
        a = combined_spectrum(obs, bank, self.cfg, self.grid, 2, us, rs, chunk=7).values
        b = combined_spectrum(obs, bank, self.cfg, self.grid, 2, us, rs, chunk=10_000).values
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_scale_invariance(self, scene):
        bank, obs = scene
        us, rs = np.linspace(-0.9, 0.9, 31), np.linspace(0.6, 2.0, 8)
        a = combined_spectrum(obs, bank, self.cfg, self.grid, 2, us, rs)
        scaled = ObservationSet(obs.observations * (3 - 2j), obs.noise_power)
        b = combined_spectrum(scaled, bank, self.cfg, self.grid, 2, us, rs)
        assert np.argmax(a.values) == np.argmax(b.values)

    def test_single_subcarrier_reduction(self):
        grid = WidebandGrid.for_array(self.cfg, 1, 30e9)
        bank, obs = simulate([Target(0.5, 1.0)], self.cfg, grid, sigma2=0.01, T=64)
        us, rs = np.linspace(-0.9, 0.9, 21), np.linspace(0.6, 2.0, 6)
        vals = [combined_spectrum(obs, bank, self.cfg, grid, 1, us, rs, m).values
                for m in (Mode.PROPOSED, Mode.NF_NOCAL, Mode.NF_ORACLE)]
        np.testing.assert_allclose(vals[0], vals[1], rtol=1e-10)
        np.testing.assert_allclose(vals[0], vals[2], rtol=1e-10)

    def test_values_positive_and_finite(self, scene):
        bank, obs = scene
        spec = combined_spectrum(obs, bank, self.cfg, self.grid, 2, np.linspace(-1, 1, 41),
                                 np.linspace(0.5, 2.0, 7), Mode.NF_ORACLE)
        assert np.all(np.isfinite(spec.values)) and np.all(spec.values > 0)

    def test_identifiability(self, scene):
        bank, obs = scene
        with pytest.raises(IdentifiabilityError):
            combined_spectrum(obs, bank, self.cfg, self.grid, 32, [0.0], [1.0])
        with pytest.raises(ConfigurationError):
            check_identifiability(32, 5, 4)

    def test_hypothesis_vectors(self, rng):
        u = rng.uniform(-1, 1, 50)
        zeta = rng.uniform(0, 1, 50)
        np.testing.assert_allclose(hypothesis_vectors(u, zeta, CFG128),
                                   phase_profile(u, zeta, CFG128.carrier, CFG128), atol=1e-11)


class TestNoiselessRecovery:
    def test_on_grid_target_recovered_exactly(self):
        u0, r0 = 0.5, 4.0
        bank, obs = simulate([Target(u0, r0)])
        us, rs = local_grid(u0, r0)
        for mode in (Mode.PROPOSED, Mode.NF_ORACLE):
            est = find_peaks(combined_spectrum(obs, bank, CFG128, GRID8, 1, us, rs, mode), 1)
            assert est.directions[0] == pytest.approx(u0, abs=1e-12)
            assert est.ranges[0] == pytest.approx(r0, abs=1e-12)

    def test_peak_dominates_distant_cells(self):
        u0, r0 = -0.3, 3.0
        bank, obs = simulate([Target(u0, r0)], seed=5)
        us, rs = local_grid(u0, r0)
        spec = combined_spectrum(obs, bank, CFG128, GRID8, 1, us, rs)
        i, j = np.argmin(np.abs(us - u0)), np.argmin(np.abs(rs - r0))
        far = np.ones(spec.values.shape, bool)
        far[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2] = False
        assert spec.values[i, j] > 1e3 * spec.values[far].max()

    def test_two_targets(self):
        targets = [Target(0.3, 3.0), Target(0.36, 4.0)]
        bank, obs = simulate(targets, seed=2)
        us = np.round(np.arange(0.25, 0.41, STEP_U), 10)
        rs = np.round(np.arange(2.5, 4.51, STEP_R), 10)
        est = find_peaks(combined_spectrum(obs, bank, CFG128, GRID8, 2, us, rs), 2)
        got = sorted(zip(est.directions, est.ranges))
        for (u, r), t in zip(got, targets):
            assert abs(u - t.direction) <= STEP_U + 1e-12
            assert abs(r - t.range) <= STEP_R + 1e-12

    def test_proposed_matches_oracle(self, desk_noiseless):
        bank, obs = desk_noiseless
        us, rs = local_grid(U45, 5.0, half_r=40)
        subs = subspaces_for(obs, 1)
        a = find_peaks(combined_spectrum(obs, bank, CFG128, GRID8, 1, us, rs, Mode.PROPOSED,
                                         subspaces=subs), 1)
        b = find_peaks(combined_spectrum(obs, bank, CFG128, GRID8, 1, us, rs, Mode.NF_ORACLE,
                                         subspaces=subs), 1)
        assert abs(a.directions[0] - b.directions[0]) <= STEP_U + 1e-12
        assert abs(a.ranges[0] - b.ranges[0]) <= STEP_R + 1e-12
        assert abs(a.directions[0] - U45) <= STEP_U

    def test_uncorrected_bias_follows_squint(self, desk_noiseless):
        bank, obs = desk_noiseless
        us, rs = local_grid(U45, 5.0, half_u=40, half_r=40)
        est = find_peaks(combined_spectrum(obs, bank, CFG128, GRID8, 1, us, rs, Mode.NF_NOCAL), 1)
        bias = abs(est.directions[0] - U45)
        shifts = np.abs((GRID8.ratios - 1) * U45)
        assert bias > 2 * STEP_U
        assert shifts.min() - STEP_U <= bias <= shifts.max() + STEP_U

    def test_narrowband_agreement(self):
        grid = WidebandGrid.for_array(CFG128, 8, 10e6)
        bank, obs = simulate([Target(U45, 5.0)], grid=grid)
        us, rs = local_grid(U45, 5.0, half_r=40)
        subs = subspaces_for(obs, 1)
        a = find_peaks(combined_spectrum(obs, bank, CFG128, grid, 1, us, rs, Mode.PROPOSED,
                                         subspaces=subs), 1)
        b = find_peaks(combined_spectrum(obs, bank, CFG128, grid, 1, us, rs, Mode.NF_NOCAL,
                                         subspaces=subs), 1)
        assert (a.directions[0], a.ranges[0]) == (b.directions[0], b.ranges[0])

    def test_uncorrected_error_grows_with_bandwidth(self):
        us = window(U45, 60, STEP_U, -1.0, 1.0)
        rs = window(5.0, 20, STEP_R, 0.5, fraunhofer_distance(CFG128))
        means = []
        for B in (0.01e9, 1e9, 10e9, 30e9):
            grid = WidebandGrid.for_array(CFG128, 8, B)
            errs = []
            for seed in range(20):
                bank, obs = simulate([Target(U45, 5.0)], grid=grid, T=40, seed=seed)
                est = find_peaks(combined_spectrum(obs, bank, CFG128, grid, 1, us, rs,
                                                   Mode.NF_NOCAL), 1)
                errs.append(abs(math.degrees(math.asin(est.directions[0]) - math.asin(U45))))
            means.append(np.mean(errs))
        assert np.all(np.diff(means) >= -1e-12)
        assert means[-1] > means[0]


class TestPeaks:
    def grid(self, values, ranges=True):
        values = np.asarray(values, float)
        dirs = np.arange(values.shape[0]) * 0.1
        rs = np.arange(values.shape[1]) * 1.0 + 1 if values.ndim == 2 else None
        return SpectrumGrid(dirs, rs, values)

    def test_gaussian_bump(self):
        x, y = np.meshgrid(np.arange(20), np.arange(15), indexing="ij")
        est = find_peaks(self.grid(np.exp(-((x - 7) ** 2 + (y - 4) ** 2) / 8)), 1)
        assert (est.directions[0], est.ranges[0]) == pytest.approx((0.7, 5.0))
        assert not est.degraded

    def test_two_bumps_descending(self):
        x, y = np.meshgrid(np.arange(30), np.arange(30), indexing="ij")
        v = np.exp(-((x - 5) ** 2 + (y - 5) ** 2) / 4) + 2 * np.exp(-((x - 20) ** 2 + (y - 22) ** 2) / 4)
        est = find_peaks(self.grid(v), 2)
        assert est.directions == pytest.approx([2.0, 0.5])
        assert est.ranges == pytest.approx([23.0, 6.0])
        assert est.values[0] > est.values[1]

    def test_plateau_tie_break(self):
        est = find_peaks(self.grid(np.ones((4, 5))), 1)
        assert (est.directions[0], est.ranges[0]) == (0.0, 1.0)
        assert est.degraded

    def test_equal_maxima_tie_break(self):
        v = np.zeros((5, 5))
        v[3, 1] = v[1, 3] = 1.0
        est = find_peaks(self.grid(v), 2)
        assert est.directions == pytest.approx([0.1, 0.3])

    def test_padding_flag(self):
        v = np.zeros((5, 5))
        v[2, 2] = 1.0
        v[0, 0] = 0.5
        v[0, 1] = 0.5
        est = find_peaks(self.grid(v), 3)
        assert est.degraded and len(est) == 3
        assert est.values[0] == 1.0

    def test_boundary_maximum(self):
        v = np.zeros((4, 4))
        v[0, 3] = 2.0
        est = find_peaks(self.grid(v), 1)
        assert (est.directions[0], est.ranges[0]) == (0.0, 4.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            find_peaks(self.grid(np.ones((2, 2))), 5)
        with pytest.raises(ValueError):
            find_peaks(self.grid(np.ones((2, 2))), 0)

    def test_far_field_has_no_range(self):
        spec = SpectrumGrid(np.linspace(-1, 1, 5), None, np.array([0, 1, 3, 1, 0.0]), Mode.FF_NOCAL)
        est = find_peaks(spec, 1)
        assert est.directions[0] == 0.0 and np.isnan(est.ranges[0])
        assert est.to_records()[0]["r"] is None

    def test_parabolic_refinement(self):
        dirs = np.linspace(-1, 1, 21)
        rs = np.linspace(1, 3, 21)
        u0, r0 = 0.137, 2.04
        v = 10 - (dirs[:, None] - u0) ** 2 - (rs[None, :] - r0) ** 2
        spec = SpectrumGrid(dirs, rs, v)
        ref = refine_peaks(spec, find_peaks(spec, 1))
        assert ref.directions[0] == pytest.approx(u0)
        assert ref.ranges[0] == pytest.approx(r0)


class TestExports:
    def test_spectrum_csv(self, tmp_path):
        spec = SpectrumGrid(np.array([-0.5, 0.5]), np.array([1.0, 2.0, 3.0]),
                            np.arange(6.0).reshape(2, 3))
        text = spec.to_csv(tmp_path / "s.csv")
        lines = text.splitlines()
        assert lines[0] == "u,r,P"
        assert lines[1:3] == ["-0.5,1.0,0.0", "-0.5,2.0,1.0"]
        assert (tmp_path / "s.csv").read_text() == text

    def test_far_field_csv(self):
        text = SpectrumGrid(np.array([0.0]), None, np.array([2.0])).to_csv()
        assert text.splitlines()[1] == "0.0,,2.0"

    def test_estimates_json(self):
        est = Estimates(np.array([0.1]), np.array([2.0]), np.array([5.0]), False, Mode.PROPOSED)
        assert json.loads(est.to_json()) == [{"u": 0.1, "r": 2.0, "value": 5.0, "mode": "proposed"}]


class TestModes:
    def test_table(self):
        table = estimator_mode_table()
        assert [t.mode for t in table] == list(ALL_MODES)
        assert sum(t.near_field for t in table) == 3

    @pytest.mark.parametrize("name, mode", [
        ("proposed", Mode.PROPOSED), ("ProposedBSC", Mode.PROPOSED), ("NFNoCal", Mode.NF_NOCAL),
        ("ff_nocal", Mode.FF_NOCAL), ("NFCalOracle", Mode.NF_ORACLE), ("ff-oracle", Mode.FF_ORACLE),
    ])
    def test_parse(self, name, mode):
        assert parse_mode(name) is mode

    def test_unknown(self):
        with pytest.raises(ValueError):
            parse_mode("esprit")

    def test_literal_rejects_far_field(self):
        with pytest.raises(ValueError):
            literal_spectrum([], None, CFG128, GRID8, [0.0], [1.0], Mode.FF_NOCAL)


class TestSearchGrid:
    def test_defaults(self):
        us, rs = search_grid(CFG128)
        assert len(us) == 1001 and us[0] == -1 and us[-1] == 1
        assert rs[0] == 0.5 and rs[-1] <= fraunhofer_distance(CFG128)
        assert rs[-1] > fraunhofer_distance(CFG128) - 0.1
        np.testing.assert_allclose(np.diff(rs), 0.1)

    def test_errors(self):
        with pytest.raises(ConfigurationError):
            search_grid(CFG128, step_u=0)
        with pytest.raises(ConfigurationError):
            search_grid(CFG128, r_min=0)
        with pytest.raises(ConfigurationError):
            search_grid(CFG128, r_min=10, r_max=5)
