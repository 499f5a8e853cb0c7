"""Acceptance gate: every release criterion runs as its own test and prints
one pass/fail line, so a bare `pytest tests/test_acceptance.py -s` doubles
as the release checklist."""
import pytest

from streamvc.selftest import CRITERIA


@pytest.mark.parametrize("name", list(CRITERIA), ids=list(CRITERIA))
def test_criterion(name, capsys):
    ok, detail = CRITERIA[name]()
    with capsys.disabled():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_all_nine_criteria_registered():
    assert list(CRITERIA) == [
        "stream_batch_encoder",
        "lookahead_oracle",
        "arch_dsl",
        "stream_batch_decoder",
        "vocoders",
        "chunk_invariance",
        "quantization",
        "perceived_delay",
        "bench_report",
    ]
