import math

import numpy as np
import pytest

import sddeint.cli as cli
from sddeint import SeedInfo, build_artm, builtin, sample_paths


def write_config(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


BASE_CONFIG = """\
[problem]
name = "example1"
delays = [1.0, 0.5]
T = 2.0

[mesh]
h_initial = 0.25
h_refined_initial = 0.03125

[study]
schemes = ["em", "milstein-refined"]
delayed_values = "mesh"
h_initial_list = [0.25, 0.125, 0.0625]
n_trials = 6
seed = 77
observation_times = [2.0]

[output]
dir = "{out}"
"""


@pytest.fixture
def base_config(tmp_path):
    text = BASE_CONFIG.format(out=tmp_path / "out")
    return write_config(tmp_path / "cfg.toml", text)


class TestHelp:
    def test_lists_subcommands_and_config_keys(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for name in ("mesh", "simulate", "converge", "list-problems"):
            assert name in out
        for key in ("h_initial", "h_refined_initial", "schemes", "n_trials",
                    "seed", "observation_times", "delays"):
            assert key in out


class TestConfigValidation:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "bad.toml", """\
[problem]
name = "example1"
typo_key = 1
""")
        assert cli.main(["mesh", cfg]) == cli.EXIT_CONFIG
        assert "typo_key" in capsys.readouterr().err

    def test_unknown_section_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "bad.toml", "[bogus]\nx = 1\n")
        assert cli.main(["mesh", cfg]) == cli.EXIT_CONFIG

    def test_unknown_problem_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "bad.toml", """\
[problem]
name = "missing"

[mesh]
h_initial = 0.25
""")
        assert cli.main(["mesh", cfg]) == cli.EXIT_CONFIG

    def test_step_bound_violation_message(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "bad.toml", """\
[problem]
name = "example1"
delays = [1.0, 0.5]
T = 2.0

[mesh]
h_initial = 1.0
h_refined_initial = 0.25
""")
        assert cli.main(["mesh", cfg]) == cli.EXIT_CONFIG
        assert "step" in capsys.readouterr().err.lower()

    def test_mesh_cap_exit_code(self, base_config, monkeypatch):
        from sddeint.mesh import MeshSizeError

        def boom(*args, **kwargs):
            raise MeshSizeError("too many points")

        monkeypatch.setattr(cli, "build_augmented_mesh", boom)
        assert cli.main(["mesh", base_config]) == cli.EXIT_MESH_CAP


class TestMeshCommand:
    def test_reports_frozen_cell(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.toml", f"""\
[problem]
name = "zero"
delays = [0.25, {math.pi / 4}, 1.0, 1.0]
T = 1.0

[mesh]
h_initial = 0.015625
h_refined_initial = 0.015625
""")
        assert cli.main(["mesh", cfg]) == 0
        out = capsys.readouterr().out
        assert "83" in out
        assert "Bellman" in out

    def test_divisible_cell_and_point_dump(self, tmp_path, capsys):
        dump = tmp_path / "points.csv"
        cfg = write_config(tmp_path / "cfg.toml", """\
[problem]
name = "zero"
delays = [1.0, 1.0, 1.0, 1.0]
T = 1.0

[mesh]
h_initial = 0.0009765625
h_refined_initial = 0.0009765625
""")
        assert cli.main(["mesh", cfg, "--points-csv", str(dump)]) == 0
        out = capsys.readouterr().out
        assert "1025" in out
        lines = dump.read_text().strip().split("\n")
        assert lines[0] == "t"
        assert len(lines) == 1026
        assert float(lines[1]) == 0.0
        assert float(lines[-1]) == 1.0


class TestSimulateCommand:
    def test_zero_problem_constant_columns(self, tmp_path, capsys):
        out_csv = tmp_path / "traj.csv"
        cfg = write_config(tmp_path / "cfg.toml", """\
[problem]
name = "zero"
delays = [1.0, 0.5]
T = 2.0

[mesh]
h_initial = 0.25
h_refined_initial = 0.0625

[study]
schemes = ["em"]
seed = 5
""")
        assert cli.main(["simulate", cfg, "--out", str(out_csv)]) == 0
        rows = out_csv.read_text().strip().split("\n")
        assert rows[0] == "t,y1,y2"
        for line in rows[1:]:
            _, y1, y2 = line.split(",")
            assert float(y1) == 1.0 and float(y2) == -0.5

    def test_same_seed_identical_files(self, base_config, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert cli.main(["simulate", base_config, "--out", str(a)]) == 0
        assert cli.main(["simulate", base_config, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_em_trajectory_matches_direct_recursion(self, base_config, tmp_path):
        """Golden check: the CSV must reproduce an independently coded
        Euler-Maruyama recursion evaluated on the same Brownian paths."""
        out_csv = tmp_path / "em.csv"
        assert cli.main(["simulate", base_config, "--out", str(out_csv)]) == 0
        lines = out_csv.read_text().strip().split("\n")[1:]
        got = np.array([[float(v) for v in line.split(",")] for line in lines])

        prob = builtin("example1", delays=(1.0, 0.5), terminal_time=2.0)
        artm = build_artm(prob.delays, 0.25, 0.03125)
        paths = sample_paths(artm, 2, SeedInfo(77, 0))
        h = 0.25
        a0, a1, a2 = prob.A
        times = [0.25 * n for n in range(9)]
        values = {0.0: prob.history(0.0)}
        for t in times[:-1]:
            y = values[t]
            y1 = values[t - 1.0] if t - 1.0 >= 0.0 else prob.history(t - 1.0)
            y2 = values[t - 0.5] if t - 0.5 >= 0.0 else prob.history(t - 0.5)
            ia, ib = artm.locate(t), artm.locate(t + h)
            dw = paths.values[1:, ib] - paths.values[1:, ia]
            f_val = np.array([math.sin(y[0]) / 5.0, math.cos(y[1]) / 5.0])
            g1 = np.array([(y2[0] - y1[0]) / 3.0, (y1[1] - y2[1]) / 3.0])
            g2 = np.array([
                (math.exp(-y[1] ** 2) + math.exp(-y1[0] ** 2) + math.exp(-y1[1] ** 2)) / 10.0,
                (math.exp(-y[0] ** 2) + math.exp(-y2[0] ** 2) + math.exp(-y2[1] ** 2)) / 10.0,
            ])
            values[t + h] = (
                y + (a0 @ y + f_val) * h + (a1 @ y + g1) * dw[0] + (a2 @ y + g2) * dw[1]
            )
        expected = np.array([values[t] for t in times])
        np.testing.assert_allclose(got[:, 0], times, atol=1e-15)
        np.testing.assert_allclose(got[:, 1:], expected, rtol=1e-12)


INTERPOLATION_CONFIG = f"""\
[problem]
name = "example1"
delays = [1.0, {math.pi / 4}]
T = 2.0

[mesh]
h_initial = 0.25
h_refined_initial = 0.03125

[study]
schemes = ["em", "milstein-refined"]
delayed_values = "interpolation"
h_initial_list = [0.25, 0.125]
n_trials = 4
seed = 11
"""


class TestInterpolationMode:
    def test_simulate_indivisible_delays(self, tmp_path):
        cfg = write_config(tmp_path / "li.toml", INTERPOLATION_CONFIG)
        out = tmp_path / "li_traj.csv"
        assert cli.main(["simulate", cfg, "--out", str(out)]) == 0
        rows = out.read_text().strip().split("\n")[1:]
        vals = np.array([[float(v) for v in line.split(",")] for line in rows])
        assert np.all(np.isfinite(vals))
        # fixed-step grid despite the irrational delay
        np.testing.assert_allclose(np.diff(vals[:, 0]), 0.25, rtol=1e-12)

    def test_converge_indivisible_delays(self, tmp_path):
        cfg = write_config(tmp_path / "li.toml", INTERPOLATION_CONFIG)
        out = tmp_path / "li_err.csv"
        assert cli.main(["converge", cfg, "--out", str(out), "--workers", "1"]) == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 5
        assert all(",linear_interpolation," in line for line in lines[1:])


class TestConvergeCommand:
    def test_round_trip_deterministic(self, base_config, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert cli.main(["converge", base_config, "--out", str(a), "--workers", "1"]) == 0
        assert cli.main(["converge", base_config, "--out", str(b), "--workers", "1"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_summary_printed(self, base_config, tmp_path, capsys):
        out = tmp_path / "c.csv"
        assert cli.main(["converge", base_config, "--out", str(out), "--workers", "1"]) == 0
        text = capsys.readouterr().out
        assert "slope" in text
        assert out.exists()

    def test_trials_override(self, base_config, tmp_path):
        out = tmp_path / "d.csv"
        assert cli.main([
            "converge", base_config, "--out", str(out), "--workers", "1", "--trials", "3",
        ]) == 0
        line = out.read_text().strip().split("\n")[1]
        assert line.split(",")[6] == "3"


class TestListProblems:
    def test_lists_registry(self, capsys):
        assert cli.main(["list-problems"]) == 0
        out = capsys.readouterr().out.split()
        assert out == ["example1", "linear-decoupled", "zero"]
