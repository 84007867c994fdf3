import numpy as np
import pytest

from sirv_mfc import cli
from sirv_mfc.config import preset, preset_text
from sirv_mfc.run import (
    OUTPUT_ROOT_ENV,
    compare_reports,
    norm_study,
    read_report,
    read_snapshot,
    region_masks,
    run,
    write_norm_study,
    write_snapshot,
)
from sirv_mfc.grid import ConfigurationError
from sirv_mfc.state import POPULATIONS


def small_config(name="exp1", iters=30, tol=1e-6):
    return preset(name).with_resolution(8, 8).with_solver(max_iters=iters, tol=tol, min_iters=10).with_output(
        snapshot_nodes=(0, 4, 7)
    )


def small_config_text(tmp_path, iters=30, tol="1e-6"):
    text = preset_text("exp1").replace("nx1 = 64", "nx1 = 8").replace("nx2 = 64", "nx2 = 8")
    text = text.replace("nt = 32 ", "nt = 8 ").replace("max_iters = 3000", f"max_iters = {iters}")
    text = text.replace("tol = 1e-6", f"tol = {tol}\nmin_iters = 10").replace("[0, 8, 16, 24, 31]", "[0, 7]")
    path = tmp_path / "small.cfg"
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    report, result = run(small_config(), outdir=out)
    return out, report, result


class TestSnapshots:
    def test_round_trip_is_bitwise(self, tmp_path, rng):
        a = rng.standard_normal((5, 7))
        write_snapshot(tmp_path / "a.bin", a, 3, "I")
        b, meta = read_snapshot(tmp_path / "a.bin")
        assert b.tobytes() == a.tobytes()
        assert meta == {"nx1": "5", "nx2": "7", "dtype": "float64", "node": "3", "population": "I"}

    def test_rejects_other_files(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"hello\n1234")
        with pytest.raises(ValueError):
            read_snapshot(tmp_path / "x.bin")

    def test_truncated_payload(self, tmp_path):
        write_snapshot(tmp_path / "a.bin", np.ones((3, 3)), 0, "S")
        data = (tmp_path / "a.bin").read_bytes()
        (tmp_path / "a.bin").write_bytes(data[:-8])
        with pytest.raises(ValueError, match="payload"):
            read_snapshot(tmp_path / "a.bin")


class TestRegions:
    def test_halves_and_quadrants_partition(self):
        model = small_config().build_model()
        masks = region_masks(model, ("halves", "quadrants"))
        halves = masks["left"].astype(int) + masks["right"]
        quads = sum(masks[k].astype(int) for k in ("top_left", "bottom_left", "top_right", "bottom_right"))
        assert np.all(halves == 1) and np.all(quads == 1)

    def test_factory_mask(self):
        model = small_config().build_model()
        masks = region_masks(model, ("factories",), ("factory",))
        assert np.array_equal(masks["factory_factory"], model.logistics.factory)


class TestRun:
    def test_files_written(self, small_run):
        out, report, _ = small_run
        assert (out / "series.csv").exists() and (out / "masses.csv").exists()
        for p in POPULATIONS:
            for n in (0, 4, 7):
                assert (out / "snapshots" / f"rho_{p}_n{n:03d}.bin").exists()

    def test_snapshot_matches_solution(self, small_run):
        out, _, result = small_run
        arr, meta = read_snapshot(out / "snapshots" / "rho_V_n007.bin")
        assert np.array_equal(arr, result.u.rho[3, 7]) and meta["node"] == "7"

    def test_region_masses_sum_to_total(self, small_run):
        out, _, _ = small_run
        data = np.genfromtxt(out / "masses.csv", delimiter=",", names=True)
        for p in POPULATIONS:
            left_right = data[f"{p}_left"] + data[f"{p}_right"]
            quads = sum(data[f"{p}_{q}"] for q in ("top_left", "bottom_left", "top_right", "bottom_right"))
            assert np.abs(left_right - data[f"{p}_total"]).max() < 1e-10
            assert np.abs(quads - data[f"{p}_total"]).max() < 1e-10

    def test_series_rows(self, small_run):
        out, _, result = small_run
        data = np.genfromtxt(out / "series.csv", delimiter=",", names=True)
        assert len(np.atleast_1d(data["iteration"])) == len(result.trace)

    def test_report_round_trip(self, small_run):
        out, report, _ = small_run
        back = read_report(out / "report.txt")
        for k, v in report.as_dict().items():
            assert back[k] == pytest.approx(v, rel=0, abs=0) if isinstance(v, float) else back[k] == v

    def test_report_contents(self, small_run):
        _, report, _ = small_run
        assert report.iterations == 30 and not report.converged
        assert set(report.terminal_mass) == set(POPULATIONS)
        assert set(report.production_per_factory) == {"factory"}

    def test_bad_snapshot_node(self, tmp_path):
        cfg = small_config(iters=1).with_output(snapshot_nodes=(8,))
        with pytest.raises(ConfigurationError, match="snapshot node"):
            run(cfg, outdir=tmp_path)

    def test_compare(self):
        rows = compare_reports({"a": 1.0, "b": True, "c": 2.0, "n": "x"}, {"a": 2.0, "b": False, "c": 2.0, "n": "x"})
        assert [r[3] for r in rows] == ["<", "!=", "=", "="]


class TestNormStudy:
    def test_ratios_near_two(self):
        rows = norm_study([8, 16, 32])
        for r in rows[1:]:
            assert r.ratio == pytest.approx(2.0, abs=0.05)
        assert rows[0].grad_norm == pytest.approx(np.sqrt(8) / rows[0].dx, rel=0.05)

    @pytest.mark.parametrize("sizes", [[16], [32, 16], [16, 16]])
    def test_rejects_bad_sizes(self, sizes):
        with pytest.raises(ConfigurationError):
            norm_study(sizes)

    def test_csv(self, tmp_path):
        text = write_norm_study(tmp_path / "n.csv", norm_study([8, 16]))
        assert (tmp_path / "n.csv").read_text() == text
        assert text.splitlines()[0] == "n,dx,grad_norm,ratio,energy"


class TestCli:
    def test_validate(self, tmp_path, capsys):
        assert cli.main(["validate", str(small_config_text(tmp_path))]) == cli.EXIT_OK
        assert "ok" in capsys.readouterr().out

    def test_validate_reports_errors(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text(preset_text("exp1").replace("beta = 0.8", "beta = -1.0"))
        assert cli.main(["validate", str(path)]) == cli.EXIT_ERROR
        assert "epidemic.beta" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["validate", str(tmp_path / "none.cfg")]) == cli.EXIT_ERROR

    def test_run_hits_budget(self, tmp_path):
        out = tmp_path / "out"
        code = cli.main(["run", str(small_config_text(tmp_path, iters=20)), "--out", str(out)])
        assert code == cli.EXIT_MAX_ITERS
        assert read_report(out / "report.txt")["iterations"] == 20

    def test_run_converges(self, tmp_path):
        out = tmp_path / "out"
        code = cli.main(["run", str(small_config_text(tmp_path, iters=500, tol="0.05")), "--out", str(out)])
        assert code == cli.EXIT_OK
        assert read_report(out / "report.txt")["converged"] is True

    def test_output_root_variable(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
        code = cli.main(["run", "--preset", "exp2a", "--nx", "8", "--nt", "8", "--max-iters", "5"])
        assert code == cli.EXIT_MAX_ITERS
        assert (tmp_path / "root" / "exp2a" / "report.txt").exists()

    def test_run_rejects_bad_override(self, tmp_path):
        code = cli.main(["run", "--preset", "exp1", "--nx", "0", "--out", str(tmp_path)])
        assert code == cli.EXIT_ERROR

    def test_norm_study(self, tmp_path, capsys):
        assert cli.main(["norm-study", "--grids", "8,16", "--out", str(tmp_path / "n.csv")]) == cli.EXIT_OK
        assert capsys.readouterr().out.startswith("n,dx,grad_norm")
        assert cli.main(["norm-study", "--grids", "16"]) == cli.EXIT_ERROR

    def test_compare(self, small_run, capsys):
        out, _, _ = small_run
        path = str(out / "report.txt")
        assert cli.main(["compare", path, path]) == cli.EXIT_OK
        assert "terminal_mass.S" in capsys.readouterr().out
