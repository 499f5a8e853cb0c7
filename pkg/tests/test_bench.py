import numpy as np
import pytest

from streamvc import bench
from streamvc.archdsl import analyze_delay, get_arch
from streamvc.bench import BenchReport
from streamvc.errors import ConfigError


def fixed_report(name="causal", component="encoder", chunk_ms=80.0, mean_ms=4.0,
                 rtf=20.0, size=1000):
    return BenchReport(name=name, component=component, chunk_ms=chunk_ms,
                       mean_ms=mean_ms, median_ms=mean_ms, p95_ms=mean_ms,
                       rtf=rtf, model_size_bytes=size, iterations=3, warmup=1)


class TestMeasure:
    def test_single_iteration_p95_equals_sample(self):
        r = bench.measure(lambda: None, chunk_ms=10.0, iters=1, warmup=0,
                          name="x", component="encoder")
        assert r.p95_ms == r.mean_ms == r.median_ms

    def test_rtf_arithmetic(self):
        import time
        r = bench.measure(lambda: time.sleep(0.002), chunk_ms=20.0, iters=3,
                          warmup=1, name="x", component="encoder")
        assert abs(r.rtf - 20.0 / r.mean_ms) < 1e-9
        assert r.mean_ms >= 2.0

    def test_warmup_excluded_from_count(self):
        calls = []
        r = bench.measure(lambda: calls.append(1), chunk_ms=1.0, iters=4,
                          warmup=2, name="x", component="encoder")
        assert len(calls) == 6
        assert r.iterations == 4 and r.warmup == 2

    def test_zero_iters_rejected(self):
        with pytest.raises(ConfigError):
            bench.measure(lambda: None, 1.0, 0, 0, "x", "encoder")

    def test_percentile_interpolation(self):
        assert bench._percentile([1.0, 2.0, 3.0, 4.0], 0.5) == 2.5
        assert bench._percentile([5.0], 0.95) == 5.0


class TestBenchComponent:
    def test_encoder_defaults(self):
        r = bench.bench_component("encoder", arch="causal", iters=2, warmup=1,
                                  d_model=16)
        assert r.component == "encoder"
        assert r.chunk_ms == 80.0
        assert r.rtf > 0 and r.mean_ms > 0
        assert r.model_size_bytes > 0

    def test_decoder_and_vocoder_chunk_default(self):
        for part in ("decoder", "vocoder"):
            r = bench.bench_component(part, arch="causal", iters=2, warmup=0,
                                      d_model=16)
            assert r.chunk_ms == 25.0, part

    def test_unknown_part(self):
        with pytest.raises(ConfigError):
            bench.bench_component("postnet")


class TestPaperAnnotations:
    def test_config_wers(self):
        assert bench.paper_wer("causal") == 19.1
        assert bench.paper_wer("lsa1") == 17.6
        assert bench.paper_wer("lsa2") == 16.4
        assert bench.paper_wer("lsa_ls2") == 15.3
        assert bench.paper_wer("base") == 14.7
        assert bench.paper_wer("ls1") is None

    def test_reference_table_units(self):
        for key, entry in bench.PAPER_REFERENCE.items():
            assert entry.value > 0, key
            assert entry.unit in ("%", "MB", "ms", "x"), key


class TestReportCsv:
    def test_header_and_row_shape(self):
        text = bench.report_csv([fixed_report()])
        lines = text.strip().split("\n")
        assert lines[0] == ",".join(bench.CSV_COLUMNS)
        assert len(lines) == 2
        assert len(lines[1].split(",")) == len(bench.CSV_COLUMNS)

    def test_blank_cells_without_delay_report(self):
        row = bench.report_csv([fixed_report(name="gl", component="vocoder")])
        cells = row.strip().split("\n")[1].split(",")
        idx = {c: i for i, c in enumerate(bench.CSV_COLUMNS)}
        assert cells[idx["lookahead_frames"]] == ""
        assert cells[idx["delay_ms"]] == ""
        assert cells[idx["perceived_delay_ms"]] == ""
        assert cells[idx["paper_wer"]] == ""

    def test_delay_and_wer_columns(self):
        delays = {"lsa_ls2": analyze_delay(get_arch("lsa_ls2"))}
        row = bench.report_csv([fixed_report(name="lsa_ls2", rtf=2.0)], delays)
        cells = row.strip().split("\n")[1].split(",")
        idx = {c: i for i, c in enumerate(bench.CSV_COLUMNS)}
        assert cells[idx["lookahead_frames"]] == "99"
        assert cells[idx["delay_ms"]] == "990"
        assert cells[idx["perceived_delay_ms"]] == "495.000"
        assert cells[idx["paper_wer"]] == "15.3"

    def test_deterministic(self):
        reports = [fixed_report(), fixed_report(name="lsa1")]
        delays = {"lsa1": analyze_delay(get_arch("lsa1"))}
        assert bench.report_csv(reports, delays) == bench.report_csv(reports, delays)


class TestDelayQualitySvg:
    def test_one_marker_per_annotated_config(self):
        svg = bench.delay_quality_svg()
        assert svg.count('class="config-marker"') == 5
        for label in ("causal (19.1%)", "lsa1 (17.6%)", "lsa2 (16.4%)",
                      "lsa_ls2 (15.3%)", "base (14.7%)"):
            assert label in svg

    def test_custom_points(self):
        svg = bench.delay_quality_svg({"a": (100.0, 18.0), "b": (200.0, 16.0)})
        assert svg.count('class="config-marker"') == 2
        assert "a (18%)" in svg

    def test_deterministic(self):
        assert bench.delay_quality_svg() == bench.delay_quality_svg()


class TestEmitReport:
    def test_csv_file(self, tmp_path):
        path = tmp_path / "r.csv"
        text = bench.emit_report([fixed_report()], None, "csv", path)
        assert path.read_text() == text

    def test_svg_file(self, tmp_path):
        path = tmp_path / "r.svg"
        text = bench.emit_report([], None, "svg", path)
        assert path.read_text() == text
        assert text.startswith("<svg")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ConfigError):
            bench.emit_report([], None, "pdf", tmp_path / "r.pdf")
