"""CLI behavior through main(argv), checking exit codes and emitted files."""

import shutil
import subprocess

import numpy as np
import pytest

from lmanet.bench import read_csv
from lmanet.cli import _fmt_count, _parse_res, main
from lmanet.errors import InputError
from util import rng


def write_ppm(path, h, w, seed=40):
    pixels = rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes())
    return path


class TestHelpers:
    def test_parse_res(self):
        assert _parse_res("224") == (224, 224)
        assert _parse_res("960x1920") == (960, 1920)
        assert _parse_res("960X1920") == (960, 1920)
        for bad in ("axb", "1x2x3", "0", "-5"):
            with pytest.raises(InputError):
                _parse_res(bad)

    def test_fmt_count(self):
        assert _fmt_count(950) == "950"
        assert _fmt_count(9.1e6) == "9.1M"
        assert _fmt_count(3.9e9) == "3.9G"
        assert _fmt_count(2.5e3) == "2.5K"


class TestDumpConfig:
    def test_b2_table(self, capsys):
        assert main(["dump-config", "B2"]) == 0
        out = capsys.readouterr().out
        assert "(24, 48, 96, 192, 384)" in out
        assert "(1, 3, 4, 4, 6)" in out
        assert "(6, 12)" in out

    def test_unknown_variant(self, capsys):
        with pytest.raises(SystemExit):
            main(["dump-config", "B9"])


class TestInit:
    def test_deterministic_across_runs(self, tmp_path, capsys):
        a, b, c = (tmp_path / n for n in ("a.lma", "b.lma", "c.lma"))
        assert main(["init", "--variant", "B0", "--seed", "3", "--out", str(a)]) == 0
        assert main(["init", "--variant", "B0", "--seed", "3", "--out", str(b)]) == 0
        assert main(["init", "--variant", "B0", "--seed", "4", "--out", str(c)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()
        assert "wrote" in capsys.readouterr().out


class TestInfer:
    def test_round_trip(self, tmp_path, capsys):
        ckpt = tmp_path / "b0.lma"
        img = write_ppm(tmp_path / "in.ppm", 64, 64)
        out = tmp_path / "map.pgm"
        assert main(["init", "--variant", "B0", "--out", str(ckpt)]) == 0
        assert main(["infer", "--variant", "B0", "--ckpt", str(ckpt), "--image", str(img), "--out", str(out)]) == 0
        data = out.read_bytes()
        assert data.startswith(b"P5\n64 64\n255\n")
        body = data[len(b"P5\n64 64\n255\n") :]
        assert len(body) == 64 * 64
        assert max(body) < 19  # argmax over 19 classes
        # inference is deterministic byte for byte
        out2 = tmp_path / "map2.pgm"
        assert main(["infer", "--variant", "B0", "--ckpt", str(ckpt), "--image", str(img), "--out", str(out2)]) == 0
        assert out2.read_bytes() == data

    def test_checkpoint_model_mismatch(self, tmp_path, capsys):
        ckpt = tmp_path / "b1.lma"
        img = write_ppm(tmp_path / "in.ppm", 64, 64)
        assert main(["init", "--variant", "B1", "--out", str(ckpt)]) == 0
        code = main(["infer", "--variant", "B0", "--ckpt", str(ckpt), "--image", str(img), "--out", str(tmp_path / "o.pgm")])
        captured = capsys.readouterr()
        assert code == 1
        assert "error:" in captured.err
        assert "stem.conv.weight" in captured.err

    def test_missing_checkpoint_file(self, tmp_path, capsys):
        img = write_ppm(tmp_path / "in.ppm", 64, 64)
        code = main(["infer", "--variant", "B0", "--ckpt", str(tmp_path / "nope.lma"), "--image", str(img), "--out", str(tmp_path / "o.pgm")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_image_dimensions(self, tmp_path, capsys):
        ckpt = tmp_path / "b0.lma"
        assert main(["init", "--variant", "B0", "--out", str(ckpt)]) == 0
        img = write_ppm(tmp_path / "odd.ppm", 48, 64)
        code = main(["infer", "--variant", "B0", "--ckpt", str(ckpt), "--image", str(img), "--out", str(tmp_path / "o.pgm")])
        assert code == 1
        assert "divisible" in capsys.readouterr().err


class TestMacs:
    def test_reference_point_in_band(self, capsys):
        assert main(["macs", "--variant", "B1", "--task", "cls", "--res", "224"]) == 0
        out = capsys.readouterr().out
        assert out.count("OK") == 2
        assert "stem" in out and "head" in out and "totals:" in out

    def test_non_reference_resolution(self, capsys):
        assert main(["macs", "--variant", "B0", "--task", "seg", "--res", "64"]) == 0
        out = capsys.readouterr().out
        assert "vs reference" not in out
        assert "totals:" in out

    def test_bad_resolution(self, capsys):
        assert main(["macs", "--variant", "B0", "--res", "not-a-res"]) == 1
        assert "error:" in capsys.readouterr().err


class TestBench:
    def test_small_run_writes_csv_and_png(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        code = main(
            [
                "bench",
                "--kinds",
                "relu_fast",
                "--ns",
                "64,128,256,512",
                "--d",
                "8",
                "--warmup",
                "1",
                "--repeats",
                "5",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        records = read_csv(out)
        assert [r.n for r in records] == [64, 128, 256, 512]
        png = tmp_path / "bench.png"
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        stdout = capsys.readouterr().out
        assert "slope relu_fast:" in stdout

    def test_explicit_plot_path(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        png = tmp_path / "figure.png"
        code = main(
            ["bench", "--kinds", "relu_fast", "--ns", "64,128", "--d", "4",
             "--warmup", "1", "--repeats", "5", "--out", str(out), "--plot", str(png)]
        )
        assert code == 0
        assert png.exists()
        assert "needs >= 4 token counts" in capsys.readouterr().out

    def test_bad_ns(self, tmp_path, capsys):
        code = main(["bench", "--ns", "64,notanumber", "--out", str(tmp_path / "x.csv")])
        assert code == 1
        assert "--ns" in capsys.readouterr().err


class TestVerify:
    def test_default_suite_passes(self, capsys):
        assert main(["verify", "--max-n", "64"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 9
        assert "FAIL" not in out
        assert "all 9 properties passed" in out

    def test_eps_zero_shows_hazard(self, capsys):
        assert main(["verify", "--max-n", "64", "--eps", "0"]) == 1
        out = capsys.readouterr().out
        assert "FAIL" in out
        assert "EXPECTED-FAIL" in out


class TestConsoleScript:
    def test_entry_point_installed(self):
        exe = shutil.which("lmanet")
        assert exe, "console script should be installed with the package"
        proc = subprocess.run([exe, "dump-config", "B0"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "(8, 16, 32, 64, 128)" in proc.stdout
