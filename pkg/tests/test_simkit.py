import json
from pathlib import Path

import numpy as np
import pytest

from irsotfs.detect import QamAlphabet
from irsotfs.simkit import ConfigError, ResultTable, build_config, load_config, run_experiment, write_outputs
from irsotfs.simkit.config import apply_overrides, parse_override
from irsotfs.simkit.links import Geometry
from irsotfs.simkit.pool import run_tasks, task_rng
from irsotfs.simkit.scenarios import _awgn, _frames, case_channel, draw_links, noise_variance

SMALL = {"grid": {"M": 4, "N": 4, "M_CP": 3}, "irs": {"K": 4}, "trials": 3}


def small(**over):
    raw = json.loads(json.dumps(SMALL))
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(raw.get(k), dict):
            raw[k].update(v)
        else:
            raw[k] = v
    return build_config(raw)


class TestConfig:
    def test_defaults(self):
        cfg = build_config({})
        assert cfg.scenario == "sum_rate" and cfg.grid.M == 16 and cfg.K == 16
        assert cfg.cases == [1, 2, 3, 4, 5, 7]
        assert cfg.beamforming.enabled

    def test_detection_scenarios_default_to_identity_precoding(self):
        assert not build_config({"scenario": "ber"}).beamforming.enabled

    @pytest.mark.parametrize(
        "raw, key",
        [
            ({"bogus": 1}, "bogus"),
            ({"grid": {"Mx": 4}}, "grid.Mx"),
            ({"scenario": "plot"}, "scenario"),
            ({"trials": 0}, "trials"),
            ({"snr_db": []}, "snr_db"),
            ({"snr_db": "0"}, "snr_db"),
            ({"scenario": "ber", "cases": [7]}, "cases"),
            ({"cases": [1, 1]}, "cases"),
            ({"grid": {"M": 4, "N": 4, "M_CP": 4}}, "grid"),
            ({"channel": {"model": "TDL"}}, "channel"),
            ({"geometry": {"gain_mode": "free"}}, "geometry.gain_mode"),
            ({"detector": {"rho": 0.1}}, "detector"),
            ({"workers": 0}, "workers"),
            ({"mse": {"configs": [{"label": "a", "speed": 3}]}}, "mse.configs[0]"),
        ],
    )
    def test_field_level_errors(self, raw, key):
        with pytest.raises(ConfigError) as e:
            build_config(raw)
        assert e.value.key == key
        assert str(e.value).startswith(key)

    def test_overrides(self):
        assert parse_override("snr_db=[0]") == ("snr_db", [0])
        assert parse_override("channel.model=EVA") == ("channel.model", "EVA")
        raw = apply_overrides({}, ["grid.M=8", "trials=5"])
        assert raw == {"grid": {"M": 8}, "trials": 5}
        with pytest.raises(ConfigError):
            apply_overrides({}, ["grid.Q=3"])
        with pytest.raises(ConfigError):
            apply_overrides({}, ["nothing"])

    def test_load_from_file(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('name = "x"\nsnr_db = [0, 5]\n[grid]\nM = 8\nN = 8\n')
        cfg = load_config(p, ["snr_db=[1]"], seed=9)
        assert cfg.snr_db == [1.0] and cfg.seed == 9 and cfg.grid.M == 8
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.toml")
        p.write_text("grid = [")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_workers_from_environment(self, monkeypatch):
        monkeypatch.setenv("IRSOTFS_WORKERS", "3")
        assert build_config({}).workers == 3


class TestGeometry:
    def test_reference_normalization(self):
        g = Geometry()
        gains = g.link_gains()
        dist = lambda a, b: np.linalg.norm(np.subtract(a, b))
        ref = dist(g.bs, g.ue) ** -3.5
        assert gains["direct"] == pytest.approx(1.0)
        assert gains["bs_irs"] == pytest.approx(dist(g.bs, g.irs) ** -2.2 / ref)
        assert gains["irs_ue"] == pytest.approx(dist(g.irs, g.ue) ** -2.2)

    def test_direct_gain_falls_with_distance(self):
        g = Geometry()
        near = g.link_gains((0.0, -30.0, 1.0))["direct"]
        far = g.link_gains((60.0, 0.0, 1.0))["direct"]
        assert near > g.link_gains()["direct"] > far


class TestPool:
    def test_task_rng_independent_of_order(self):
        a = task_rng(1, 2, 3).standard_normal(4)
        task_rng(1, 9).standard_normal(100)
        np.testing.assert_array_equal(a, task_rng(1, 2, 3).standard_normal(4))
        assert not np.array_equal(a, task_rng(1, 3, 2).standard_normal(4))

    def test_run_tasks_order(self):
        assert run_tasks(abs, [-3, 1, -2], workers=2) == [3, 1, 2]


class TestSnrDefinition:
    def test_empirical_snr_within_one_percent(self):
        rng = np.random.default_rng(0)
        for Q, snr_db in ((1, 6.0), (2, 12.0)):
            al = QamAlphabet(Q)
            s2 = float(noise_variance(snr_db, al.energy))
            _, syms = _frames(rng, 4096, 64, al)
            z = _awgn(rng, syms.shape, s2)
            measured = 10 * np.log10(np.mean(np.abs(syms) ** 2) / np.mean(np.abs(z) ** 2))
            assert abs(10 ** ((measured - snr_db) / 10) - 1) < 0.01


class TestScenarios:
    def test_case5_is_direct_only(self):
        cfg = small(cases=[5])
        links = draw_links(cfg, 0)
        H, panel, _ = case_channel(cfg, 5, links, 0)
        np.testing.assert_array_equal(H, links.Hd)
        assert panel is None

    def test_sum_rate_determinism_and_workers(self):
        cfg = small(cases=[1, 2, 5], snr_db=[0, 10])
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        cfg.workers = 2
        c = run_experiment(cfg)
        assert a.to_csv() == b.to_csv() == c.to_csv()
        assert np.all(np.isfinite(a.means)) and np.all(a.column(1) > 0)
        assert np.all(a.column(1)[1] > a.column(1)[0])

    def test_all_sum_rate_cases_run(self):
        cfg = small(cases=[1, 2, 3, 4, 5, 6, 7, "ofdm"], trials=2, irs={"K": 2})
        t = run_experiment(cfg)
        assert t.means.shape == (1, 8) and np.all(np.isfinite(t.means)) and np.all(t.means > 0)

    def test_noiseless_ber_is_zero(self):
        # two receive antennas keep every stacked channel full column rank
        cfg = small(scenario="ber", cases=[1, 3, 5], snr_db=[300], antennas={"n_t": 1, "n_r": 2},
                    ber={"frames_per_channel": 4, "max_frames": 8, "batch_channels": 2})
        t = run_experiment(cfg)
        assert np.all(t.means == 0)
        assert np.all(t.counts == 8)

    def test_ofdm_reference_ici(self):
        # the per-subcarrier detector ignores inter-carrier interference: error-free only without Doppler
        ber = dict(frames_per_channel=4, max_frames=8, batch_channels=2)
        kw = dict(scenario="ber", cases=["ofdm"], snr_db=[300], antennas={"n_t": 1, "n_r": 2}, ber=ber)
        static = run_experiment(small(channel={"max_doppler_tap": 0}, **kw))
        moving = run_experiment(small(**kw))
        assert static.means[0, 0] == 0
        assert moving.means[0, 0] > 0

    def test_beamforming_lowers_ber(self):
        path = Path(__file__).resolve().parent.parent / "configs" / "ber_bpm.toml"
        base = ["snr_db=[6]", "cases=[1]", "ber.max_frames=4000", "ber.min_frames=4000"]
        on = run_experiment(load_config(path, base + ["beamforming.enabled=true"]))
        off = run_experiment(load_config(path, base + ["beamforming.enabled=false"]))
        assert on.means[0, 0] <= off.means[0, 0]

    def test_ber_stops_on_error_target(self):
        cfg = small(scenario="ber", cases=[1, 3], snr_db=[-5],
                    ber={"frames_per_channel": 2, "max_frames": 1000, "target_errors": 50, "batch_channels": 2})
        t = run_experiment(cfg)
        assert np.all(t.counts < 1000)
        assert np.all(np.array(t.metadata["bit_errors"]) >= 50)

    def test_ber_worker_independence(self):
        cfg = small(scenario="ber", cases=[1, 2], snr_db=[3],
                    ber={"frames_per_channel": 2, "max_frames": 24, "target_errors": 30, "batch_channels": 3})
        a = run_experiment(cfg).to_csv()
        cfg.workers = 2
        assert run_experiment(cfg).to_csv() == a

    def test_convergence_initial_point(self):
        cfg = small(scenario="convergence", cases=[1, 3], snr_db=[6], trials=20,
                    convergence={"iterations": 10}, ber={"frames_per_channel": 10})
        t = run_experiment(cfg)
        assert t.x == list(range(11))
        assert abs(t.column(1)[0] - 0.5) < 0.05
        assert t.column(1)[-1] < 0.2
        assert np.ptp(t.column(3)) == 0  # MMSE has no iterations

    def test_sweeps(self):
        t = run_experiment(small(scenario="irs_sweep", cases=[1], sweep={"K_values": [2, 4]}, trials=2))
        assert t.x == [2, 4] and t.means.shape == (2, 1)
        t = run_experiment(small(scenario="distance_sweep", cases=[1, 5], trials=2,
                                 sweep={"distances": [0.0, 30.0, 60.0]}))
        assert t.means.shape == (3, 2)
        assert t.column(5)[0] == max(t.column(5))

    def test_mse_noiseless_limit(self):
        cfg = small(scenario="mse", snr_db=[300], grid={"M": 2, "N": 2, "M_CP": 1},
                    irs={"K": 1}, channel={"max_delay_tap": 1, "max_doppler_tap": 1}, als={"max_sweeps": 100, "L": 4, "T": 8},
                    mse={"configs": [{"label": "a"}]})
        t = run_experiment(cfg)
        assert t.means[0, 0] < 1e-8


class TestResults:
    def table(self):
        return ResultTable("snr_db", [0.0, 10.0], [1, "ofdm"], [[1.5, 2.0], [3.25, 4.0]],
                           [[0.1, 0.2], [0.3, 0.4]], [[5, 5], [5, 5]])

    def test_csv_round_trip(self):
        t = self.table()
        back = ResultTable.from_csv(t.to_csv())
        assert back.cases == [1, "ofdm"]
        np.testing.assert_array_equal(back.means, t.means)
        np.testing.assert_array_equal(back.counts, t.counts)
        assert t.to_csv().splitlines()[0] == "snr_db,case1,case1_se,case1_n,ofdm,ofdm_se,ofdm_n"

    def test_summary_lines(self):
        lines = self.table().summary_lines()
        assert lines[0] == "curve=case1 snr_db=0;10 mean=1.5;3.25 se=0.1;0.3"
        for line in lines:
            assert all("=" in tok for tok in line.split())

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            ResultTable("x", [0], [1], [[1, 2]], [[0, 0]], [[1, 1]])

    def test_sidecar(self, tmp_path):
        csv_path, meta_path = write_outputs(self.table(), tmp_path / "out", "demo", {"seed": 3}, 3)
        meta = json.loads(open(meta_path).read())
        assert meta["seed"] == 3 and meta["config"] == {"seed": 3}
        assert len(meta["config_hash"]) == 64 and meta["code_version"]
        assert open(csv_path).read() == self.table().to_csv()
