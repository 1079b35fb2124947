import math
import os

import numpy as np
import pytest

import matplotlib.pyplot as plt

from sddeplots import PlotDataError, PlotSpec, collect_curves, load_rows, render
from sddeplots.render import LOG10_2, main

HEADER = "scheme,integral_mode,delayed_value_mode,h_initial,obs_time,mse,n_ok,n_failed,seed"

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
CRITERION3_CSV = os.path.join(DATA_DIR, "criterion3_errors.csv")


def synthetic_csv(tmp_path, power=1.0, name="synthetic.csv", coeff=1.0):
    """Error table with exactly MSE = coeff * h**power for a refined
    Milstein column plus an EM column twice as large."""
    lines = [HEADER]
    for h in (0.25, 0.125, 0.0625, 0.03125):
        mse = coeff * h**power
        lines.append(f"milstein,trapezoidal,mesh_exact,{h!r},1,{mse!r},10,0,1")
        lines.append(f"em,none,mesh_exact,{h!r},1,{2 * mse!r},10,0,1")
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def line_data(fig):
    return {
        line.get_label(): (np.asarray(line.get_xdata()), np.asarray(line.get_ydata()))
        for line in fig.axes[0].get_lines()
    }


class TestLoading:
    def test_header_enforced(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
        with pytest.raises(PlotDataError):
            load_rows([str(bad)])

    def test_rows_parsed(self, tmp_path):
        rows = load_rows([synthetic_csv(tmp_path)])
        assert len(rows) == 8
        assert {r["scheme"] for r in rows} == {"em", "milstein"}

    def test_empty_selection_raises(self, tmp_path):
        path = synthetic_csv(tmp_path)
        spec = PlotSpec(csv_paths=[path], out_path=str(tmp_path / "o.png"), obs_time=9.0)
        with pytest.raises(PlotDataError):
            render(spec)


class TestSyntheticReferenceLine:
    def test_order_one_collinear(self, tmp_path):
        path = synthetic_csv(tmp_path, power=1.0)
        spec = PlotSpec(csv_paths=[path], out_path=str(tmp_path / "fig.png"),
                        obs_time=1.0, ref_lines=True)
        fig = render(spec)
        data = line_data(fig)
        cx, cy = data["milstein-trapezoidal"]
        rx, ry = data["order 1 reference"]
        # the reference line is anchored on the smallest-h refined point, so
        # for MSE = h the curve must lie on the line exactly
        interp = np.interp(cx, rx, ry)
        np.testing.assert_allclose(cy, interp, atol=1e-12)
        slope = np.polyfit(cx, cy, 1)[0]
        assert abs(slope - LOG10_2) < 1e-12
        plt.close(fig)

    def test_half_order_not_collinear_with_order_one(self, tmp_path):
        path = synthetic_csv(tmp_path, power=0.5)
        spec = PlotSpec(csv_paths=[path], out_path=str(tmp_path / "fig.png"),
                        obs_time=1.0, ref_lines=True)
        fig = render(spec)
        data = line_data(fig)
        cx, cy = data["milstein-trapezoidal"]
        slope = np.polyfit(cx, cy, 1)[0]
        assert abs(slope - 0.5 * LOG10_2) < 1e-12
        plt.close(fig)


class TestRenderBehaviour:
    def test_rerender_identical_data_layer(self, tmp_path):
        path = synthetic_csv(tmp_path)
        spec = PlotSpec(csv_paths=[path], out_path=str(tmp_path / "a.png"), obs_time=1.0)
        fig_a = render(spec)
        fig_b = render(PlotSpec(csv_paths=[path], out_path=str(tmp_path / "b.png"),
                                obs_time=1.0))
        da, db = line_data(fig_a), line_data(fig_b)
        assert da.keys() == db.keys()
        for key in da:
            np.testing.assert_array_equal(da[key][0], db[key][0])
            np.testing.assert_array_equal(da[key][1], db[key][1])
        plt.close(fig_a)
        plt.close(fig_b)

    def test_numbers_come_from_csv_only(self, tmp_path):
        path = synthetic_csv(tmp_path, power=0.73, coeff=0.4)
        fig = render(PlotSpec(csv_paths=[path], out_path=str(tmp_path / "c.png"),
                              obs_time=1.0))
        _, cy = line_data(fig)["em"]
        expected = sorted(math.log10(2 * 0.4 * h**0.73) for h in (0.25, 0.125, 0.0625, 0.03125))
        np.testing.assert_allclose(sorted(cy), expected, rtol=1e-15)
        plt.close(fig)

    def test_indivisible_ignores_ref_lines_with_warning(self, tmp_path):
        path = synthetic_csv(tmp_path)
        spec = PlotSpec(csv_paths=[path], out_path=str(tmp_path / "d.png"),
                        obs_time=1.0, ref_lines=True, indivisible=True)
        with pytest.warns(UserWarning, match="ignoring"):
            fig = render(spec)
        assert not [k for k in line_data(fig) if k.startswith("order")]
        plt.close(fig)

    def test_writes_raster_and_vector(self, tmp_path):
        path = synthetic_csv(tmp_path)
        out = tmp_path / "fig.png"
        fig = render(PlotSpec(csv_paths=[path], out_path=str(out), obs_time=1.0))
        assert out.exists()
        assert (tmp_path / "fig.svg").exists()
        plt.close(fig)

    def test_multiple_input_files_merge(self, tmp_path):
        a = synthetic_csv(tmp_path, power=1.0, name="a.csv")
        li_lines = [HEADER]
        for h in (0.25, 0.125):
            li_lines.append(f"em,none,linear_interpolation,{h!r},1,{h!r},10,0,1")
        b = tmp_path / "b.csv"
        b.write_text("\n".join(li_lines) + "\n", encoding="utf-8")
        fig = render(PlotSpec(csv_paths=[a, str(b)], out_path=str(tmp_path / "m.png"),
                              obs_time=1.0))
        labels = set(line_data(fig))
        assert {"em", "milstein-trapezoidal", "em (LI)"} <= labels
        plt.close(fig)


class TestCli:
    def test_success(self, tmp_path, capsys):
        path = synthetic_csv(tmp_path)
        out = tmp_path / "cli.png"
        assert main([path, "--obs-time", "1", "--out", str(out), "--ref-lines"]) == 0
        assert out.exists()
        assert "wrote" in capsys.readouterr().out

    def test_empty_selection_nonzero_exit(self, tmp_path, capsys):
        path = synthetic_csv(tmp_path)
        out = tmp_path / "cli.png"
        assert main([path, "--obs-time", "42", "--out", str(out)]) == 1
        assert "error" in capsys.readouterr().err


@pytest.mark.skipif(not os.path.exists(CRITERION3_CSV),
                    reason="frozen study CSV not generated")
class TestStudyFigure:
    """Acceptance: the figure from the frozen divisible-study table."""

    def test_criterion_10_six_curves_two_references(self, tmp_path):
        spec = PlotSpec(csv_paths=[CRITERION3_CSV], out_path=str(tmp_path / "study.png"),
                        obs_time=4.0, ref_lines=True)
        fig = render(spec)
        data = line_data(fig)
        curve_labels = {k for k in data if not k.startswith("order")}
        assert curve_labels == {
            "em", "mem", "milstein-simple", "milstein-trapezoidal",
            "mm-simple", "mm-trapezoidal",
        }
        ref_labels = {k for k in data if k.startswith("order")}
        assert ref_labels == {"order 0.5 reference", "order 1 reference"}
        # refined variants sit below their half-order counterparts at small h
        for refined, simple in (
            ("milstein-trapezoidal", "milstein-simple"),
            ("mm-trapezoidal", "mm-simple"),
        ):
            rx, ry = data[refined]
            sx, sy = data[simple]
            i_r, i_s = int(np.argmin(rx)), int(np.argmin(sx))
            assert ry[i_r] < sy[i_s]
        plt.close(fig)
        print("\n[acceptance] criterion 10: PASS  (6 curves, 2 reference lines, "
              "refined below simple at the smallest step)")
