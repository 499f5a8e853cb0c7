import numpy as np
import pytest

from streamvc import cli
from streamvc import runtime as rt
from streamvc import store as sm


def run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def tone_wav(path, n=4000):
    t = np.arange(n) / 16000.0
    rt.write_wav(path, (0.3 * np.sin(2 * np.pi * 330 * t)).astype(np.float32))
    return str(path)


class TestAnalyze:
    def test_lsa_ls2_summary(self, capsys):
        code, out, _ = run(capsys, "analyze", "--arch", "lsa_ls2")
        assert code == 0
        assert "99 frames" in out
        assert "990 ms" in out
        assert "subsample: 8x" in out
        assert "conformer blocks: 17" in out

    def test_causal_zero_delay(self, capsys):
        code, out, _ = run(capsys, "analyze", "--arch", "causal")
        assert code == 0
        assert "0 frames = 0 ms" in out

    def test_json_mode(self, capsys):
        import json
        code, out, _ = run(capsys, "analyze", "--arch", "ls1", "--json")
        assert code == 0
        assert json.loads(out)["lookahead_frames"] == 11

    def test_bad_arch_exit_2(self, capsys):
        code, _, err = run(capsys, "analyze", "--arch", "CB XB")
        assert code == 2
        assert "error" in err.lower()


class TestConfigs:
    def test_lists_all_seven(self, capsys):
        code, out, _ = run(capsys, "configs")
        assert code == 0
        for name in ("causal", "ls1", "ls2", "lsa1", "lsa2", "lsa_ls1", "lsa_ls2"):
            assert name in out


class TestConvert:
    def test_seeded_conversion_is_byte_identical(self, capsys, tmp_path):
        src = tone_wav(tmp_path / "in.wav")
        args = ["convert", "--in", src, "--arch", "causal", "--seed", "7",
                "--d-model", "32", "--max-frames", "60"]
        code1, _, _ = run(capsys, *args, "--out", str(tmp_path / "a.wav"))
        code2, _, _ = run(capsys, *args, "--out", str(tmp_path / "b.wav"))
        assert code1 == code2 == 0
        assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()

    def test_missing_input_exit_2(self, capsys, tmp_path):
        code, _, err = run(capsys, "convert", "--in", str(tmp_path / "missing.wav"),
                           "--out", str(tmp_path / "o.wav"))
        assert code == 2
        assert "error" in err

    def test_missing_required_flag_exit_1(self, capsys, tmp_path):
        code, _, _ = run(capsys, "convert", "--out", str(tmp_path / "o.wav"))
        assert code == 1

    def test_local_weights_path(self, capsys, tmp_path):
        weights = tmp_path / "w.bin"
        code, _, _ = run(capsys, "init", "--out", str(weights), "--arch", "causal",
                         "--seed", "9", "--d-model", "32")
        assert code == 0
        src = tone_wav(tmp_path / "in.wav")
        code, out, _ = run(capsys, "convert", "--in", src,
                           "--out", str(tmp_path / "o.wav"),
                           "--arch", "causal", "--d-model", "32",
                           "--weights", str(weights))
        assert code == 0
        assert (tmp_path / "o.wav").exists()


class TestInitAndQuantize:
    def test_init_then_quantize_shrinks(self, capsys, tmp_path):
        weights = tmp_path / "w.bin"
        code, out, _ = run(capsys, "init", "--out", str(weights), "--arch", "causal",
                           "--seed", "3", "--d-model", "32")
        assert code == 0
        q = tmp_path / "w.int8.bin"
        code, out, _ = run(capsys, "quantize", "--weights", str(weights),
                           "--out", str(q), "--bits", "8")
        assert code == 0
        assert q.stat().st_size < weights.stat().st_size
        sm.from_bytes(q.read_bytes())  # loadable

    def test_bad_bits_exit_1(self, capsys, tmp_path):
        code, _, _ = run(capsys, "quantize", "--weights", "x", "--out", "y",
                         "--bits", "6")
        assert code == 1


class TestBench:
    def test_bench_with_reports(self, capsys, tmp_path):
        csv = tmp_path / "r.csv"
        svg = tmp_path / "r.svg"
        code, out, _ = run(capsys, "bench", "--part", "vocoder",
                           "--arch", "causal", "--iters", "1", "--warmup", "0",
                           "--report", str(csv), "--svg", str(svg))
        assert code == 0
        assert "rtf" in out
        header = csv.read_text().splitlines()[0]
        assert header.startswith("name,component,chunk_ms")
        assert svg.read_text().startswith("<svg")


class TestSelftest:
    def test_single_check(self, capsys):
        code, out, _ = run(capsys, "selftest", "perceived_delay")
        assert code == 0
        assert out.count("PASS") == 1

    def test_unknown_check_exit_2(self, capsys):
        code, _, err = run(capsys, "selftest", "bogus")
        assert code == 2


class TestConfigFile:
    def test_defaults_applied(self, capsys, tmp_path):
        cfg = tmp_path / "cli.cfg"
        cfg.write_text("# defaults\narch = causal\nseed = 7\n")
        code, out, _ = run(capsys, "--config", str(cfg), "analyze")
        assert code == 0
        assert "0 frames = 0 ms" in out

    def test_unknown_key_exit_1(self, capsys, tmp_path):
        cfg = tmp_path / "cli.cfg"
        cfg.write_text("nope = 3\n")
        code, _, err = run(capsys, "--config", str(cfg), "analyze")
        assert code == 1
        assert "unknown config key" in err

    def test_bad_value_exit_1(self, capsys, tmp_path):
        cfg = tmp_path / "cli.cfg"
        cfg.write_text("seed = banana\n")
        code, _, err = run(capsys, "--config", str(cfg), "analyze")
        assert code == 1


class TestUsage:
    def test_no_command_exit_1(self, capsys):
        code, _, _ = run(capsys, )
        assert code == 1

    def test_unknown_command_exit_1(self, capsys):
        code, _, _ = run(capsys, "frobnicate")
        assert code == 1
