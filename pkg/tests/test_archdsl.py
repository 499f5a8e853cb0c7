import pytest

from streamvc import archdsl
from streamvc.archdsl import (
    ArchSpec,
    NAMED_CONFIGS,
    analyze_delay,
    cb,
    get_arch,
    parse_arch,
    render_arch,
    sl,
    validate,
)
from streamvc.errors import ParseError


class TestParse:
    def test_causal_listing(self):
        spec = parse_arch("2xCB SL 2xCB SL 13xCB")
        assert spec.cb_count == 17
        assert spec.sl_count == 2
        assert all(l.right == 0 for l in spec.layers)

    def test_cb_r5(self):
        spec = parse_arch("CB_R5")
        assert len(spec.layers) == 1
        assert spec.layers[0] == cb(left=65, right=5)

    def test_lsa_ls2_listing(self):
        spec = parse_arch("2xCB SL_R7 3xCB SL_R6 3xCB SL_R4 5xCB CB_R4 CB CB_R4 CB")
        assert spec.cb_count == 17
        assert spec.sl_count == 3

    def test_comma_separated(self):
        assert parse_arch("2xCB, SL, 2xCB") == parse_arch("2xCB SL 2xCB")

    def test_explicit_left_context(self):
        spec = parse_arch("CB_R2_L10")
        assert spec.layers[0] == cb(left=10, right=2)

    def test_unknown_token_offset(self):
        with pytest.raises(ParseError) as err:
            parse_arch("CB XB CB")
        assert err.value.offset == 3

    def test_zero_count(self):
        with pytest.raises(ParseError, match="zero repeat"):
            parse_arch("0xCB")

    def test_negative_context_is_unknown_token(self):
        with pytest.raises(ParseError):
            parse_arch("CB_R-1")


class TestRender:
    def test_round_trip_all_named_configs(self):
        for name, text in NAMED_CONFIGS.items():
            spec = parse_arch(text)
            assert parse_arch(render_arch(spec)) == spec, name

    def test_single_default_cb(self):
        assert render_arch(parse_arch("CB")) == "CB"

    def test_ls1_canonical_text(self):
        assert render_arch(get_arch("ls1")) == "2xCB SL_R3 3xCB SL_R4 12xCB"

    def test_canonicalization_idempotent(self):
        text = "CB CB SL CB,CB SL 13xCB"
        once = render_arch(parse_arch(text))
        assert render_arch(parse_arch(once)) == once


class TestAnalyze:
    def test_causal_zero(self):
        r = analyze_delay(get_arch("causal"))
        assert (r.lookahead_frames, r.delay_ms, r.subsample_factor) == (0, 0.0, 4)

    def test_ls1(self):
        r = analyze_delay(get_arch("ls1"))
        assert r.lookahead_frames == 3 * 1 + 4 * 2 == 11
        assert r.delay_ms == 110.0
        assert r.subsample_factor == 4

    def test_lsa_ls2(self):
        r = analyze_delay(get_arch("lsa_ls2"))
        assert r.lookahead_frames == 7 * 1 + 6 * 2 + 4 * 4 + 4 * 8 + 4 * 8 == 99
        assert r.delay_ms == 990.0
        assert r.subsample_factor == 8

    def test_all_expected_frames(self):
        expected = {"causal": 0, "ls1": 11, "lsa1": 20, "ls2": 37,
                    "lsa_ls1": 41, "lsa2": 80, "lsa_ls2": 99}
        for name, frames in expected.items():
            assert analyze_delay(get_arch(name)).lookahead_frames == frames, name

    def test_per_layer_sums_to_total(self):
        for name in NAMED_CONFIGS:
            r = analyze_delay(get_arch(name))
            assert sum(c for _, c in r.per_layer) == r.lookahead_frames

    def test_hop_scaling(self):
        assert analyze_delay(get_arch("lsa1"), hop_ms=12.5).delay_ms == 250.0

    def test_hop_must_be_positive(self):
        with pytest.raises(ValueError):
            analyze_delay(get_arch("causal"), hop_ms=0.0)

    def test_monotone_in_right_context(self):
        base = analyze_delay(parse_arch("2xCB SL CB_R2 CB")).lookahead_frames
        bigger = analyze_delay(parse_arch("2xCB SL CB_R3 CB")).lookahead_frames
        assert bigger > base

    def test_concatenation_additivity(self):
        a = parse_arch("CB_R2 SL_R1")
        b = parse_arch("CB_R3 SL")
        joined = ArchSpec(layers=a.layers + b.layers)
        la = analyze_delay(a).lookahead_frames
        lb = analyze_delay(b).lookahead_frames
        assert analyze_delay(joined).lookahead_frames == la + a.subsample_factor * lb

    def test_paper_orderings(self):
        d = {n: analyze_delay(get_arch(n)).lookahead_frames for n in NAMED_CONFIGS}
        assert 0 == d["causal"] < d["ls1"] < d["lsa1"]
        assert d["ls2"] < d["lsa2"]


class TestValidate:
    def test_named_configs_clean(self):
        for name in NAMED_CONFIGS:
            findings = validate(get_arch(name))
            assert not any(f.level == "error" for f in findings), name
            assert get_arch(name).cb_count == 17

    def test_single_cb_warning(self):
        findings = validate(parse_arch("CB"))
        assert any(f.level == "warning" and f.code == "cb_count" for f in findings)

    def test_unbounded_left_error(self):
        spec = ArchSpec(layers=(cb(left=None),))
        findings = validate(spec)
        assert any(f.level == "error" and f.code == "unbounded_context" for f in findings)

    def test_no_cb_error(self):
        findings = validate(ArchSpec(layers=(sl(),)))
        assert any(f.code == "no_cb" for f in findings)


def test_get_arch_case_insensitive():
    assert get_arch("LSA_LS2") == get_arch("lsa_ls2")


def test_get_arch_inline_dsl():
    assert get_arch("2xCB SL").cb_count == 2
