import filecmp
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growthtrials.simulation import (SCENARIO_RATES, ReactionRates, ResourceError, ScenarioSpec,
                                     default_grid, gillespie_exact, load_archive, run_study,
                                     scenario, simulate_states, synthesize_dataset, tau_leap)


class TestScenarios:
    @pytest.mark.parametrize("name,net1", [("no-effect", 0.09), ("weak", 0.07),
                                           ("medium", 0.05), ("strong", -0.01)])
    def test_rates(self, name, net1):
        r = SCENARIO_RATES[name]
        assert (r.r1, r.r3, r.r4) == (0.2, 0.2, 0.11)
        assert r.net == pytest.approx((net1, 0.09))

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            ReactionRates(0.1, -0.1, 0.1, 0.1)

    def test_sample_size_split(self):
        s = scenario("weak", 8)
        assert s.mice_per_output_day == 2 and s.sample_size == 8 and s.label == "weak_n8"

    @pytest.mark.parametrize("n", [6, 0, 10])
    def test_bad_sample_size(self, n):
        with pytest.raises(ValueError):
            scenario("weak", n)

    def test_unknown_scenario(self):
        with pytest.raises(KeyError):
            scenario("huge")

    def test_default_grid_size(self):
        grid = default_grid()
        assert len(grid) == 16
        assert sum(s.n_datasets for s in grid) == 1600


class TestPaths:
    def test_zero_rates_constant(self):
        rec = simulate_states(ReactionRates(0, 0, 0, 0), 7, 9, [0.0, 5.0, 50.0], 0, "exact")
        np.testing.assert_array_equal(rec, [[7, 9]] * 3)
        rec = simulate_states(ReactionRates(0, 0, 0, 0), 7, 9, [0.0, 50.0], 0, "tau")
        np.testing.assert_array_equal(rec, [[7, 9]] * 2)

    def test_pure_death_is_monotone(self):
        traj = gillespie_exact(ReactionRates(0, 0.5, 0, 0.5), 30, 30, 10.0, seed=3)
        assert np.all(np.diff(traj.x1) <= 0) and np.all(np.diff(traj.x2) <= 0)
        assert np.all(np.diff(traj.times) >= 0)

    def test_jump_path_steps_by_one(self):
        traj = gillespie_exact(SCENARIO_RATES["weak"], 20, 20, 5.0, seed=1)
        steps = np.abs(np.diff(traj.x1)) + np.abs(np.diff(traj.x2))
        assert np.all(steps[:-1] == 1)

    def test_event_cap(self):
        with pytest.raises(ResourceError):
            simulate_states(SCENARIO_RATES["weak"], 1000, 1000, [0, 40], 0, "exact",
                            max_events=100)

    @pytest.mark.parametrize("bad", [(0, 5), (5, -1)])
    def test_initial_counts(self, bad):
        with pytest.raises(ValueError):
            simulate_states(SCENARIO_RATES["weak"], *bad, [0, 1], 0)

    def test_seed_determinism(self):
        a = tau_leap(SCENARIO_RATES["medium"], 1000, 1000, 40, seed=[1, 2])
        b = tau_leap(SCENARIO_RATES["medium"], 1000, 1000, 40, seed=[1, 2])
        np.testing.assert_array_equal(a.x1, b.x1)

    @pytest.mark.parametrize("method,n_paths,day,name", [
        ("exact", 2000, 10.0, "no-effect"),
        ("tau", 500, 14.0, "strong"),
    ])
    def test_mean_matches_exponential(self, method, n_paths, day, name):
        rates = SCENARIO_RATES[name]
        x = np.array([simulate_states(rates, 500, 500, [day], [9, i], method)[0]
                      for i in range(n_paths)], float)
        for pop, net in enumerate(rates.net):
            expected = 500 * math.exp(net * day)
            se = x[:, pop].std(ddof=1) / math.sqrt(n_paths)
            assert abs(x[:, pop].mean() - expected) < 3 * se


class TestSynthesis:
    def test_noise_free_observable(self):
        spec = scenario("weak", 8, sigma=0.0)
        d = synthesize_dataset(spec, [0, 1])
        assert d.n == 8 and d.n_mice == 4
        assert sorted(set(d.times)) == [0.0, 14.0, 40.0]
        # day-0 records equal the initial fraction exactly without noise
        np.testing.assert_array_equal(d.values[d.times == 0], 0.5)

    def test_paired_records(self):
        d = synthesize_dataset(scenario("medium", 16), 4)
        assert d.n == 16 and d.paired
        assert np.sum(d.times == 14.0) == 4 and np.sum(d.times == 40.0) == 4

    def test_noise_factor_unit_mean(self):
        # the log-normal factor at sigma=0.2 has unit mean
        spec = ScenarioSpec("x", ReactionRates(0, 0, 0, 0), 1, 1, mice_per_output_day=1,
                            output_days=(1.0,))
        vals = np.array([synthesize_dataset(spec, [5, i]).values for i in range(20000)]) / 0.5
        assert abs(vals.mean() - 1) < 4 * vals.std() / math.sqrt(vals.size)
        assert abs(np.log(vals).mean() + 0.02) < 4 * 0.2 / math.sqrt(vals.size)

    def test_extinction_regenerated(self):
        spec = ScenarioSpec("x", ReactionRates(0.0, 0.3, 0.0, 0.0), 3, 3,
                            mice_per_output_day=3, output_days=(5.0,), method="exact")
        d = synthesize_dataset(spec, 0)
        assert np.all(d.values > 0)
        assert any(f.startswith("regenerated=") for f in d.flags)

    def test_extinction_budget(self):
        spec = ScenarioSpec("x", ReactionRates(0.0, 5.0, 0.0, 0.0), 1, 1,
                            output_days=(20.0,), method="exact")
        with pytest.raises(ResourceError):
            synthesize_dataset(spec, 0, max_attempts=3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_values_in_unit_interval_without_noise(self, seed):
        d = synthesize_dataset(scenario("strong", 8, sigma=0.0, x1_0=200, x2_0=200), seed)
        assert np.all((d.values > 0) & (d.values < 1))


class TestStudy:
    def test_single_dataset_archive(self, tmp_path):
        specs = [scenario("weak", 8, n_datasets=1)]
        arch = run_study(specs, seed=3, out_dir=tmp_path)
        assert len(arch) == 1
        entry = arch.entries[0]
        assert entry["dataset_id"] == "weak_n8_r000"
        loaded = load_archive(tmp_path).get("weak_n8_r000")
        np.testing.assert_allclose(loaded.values, arch.get("weak_n8_r000").values, rtol=1e-15)

    def test_regeneration_byte_identical(self, tmp_path):
        specs = [scenario("weak", 8, n_datasets=3), scenario("strong", 16, n_datasets=2)]
        run_study(specs, seed=7, out_dir=tmp_path / "a")
        run_study(specs, seed=7, out_dir=tmp_path / "b", jobs=2)
        cmp = filecmp.dircmp(tmp_path / "a" / "datasets", tmp_path / "b" / "datasets")
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        assert filecmp.cmp(tmp_path / "a" / "manifest.json", tmp_path / "b" / "manifest.json",
                           shallow=False)

    def test_empty_grid(self):
        assert len(run_study([scenario("weak", 8, n_datasets=0)])) == 0
