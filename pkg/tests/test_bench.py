import math

import numpy as np
import pytest

from ecctlin.bench import (
    CSV_COLUMNS,
    BerPoint,
    BerReport,
    StopRule,
    bp_decoder,
    calibration_check,
    config_hash,
    emit,
    loglog_slope,
    make_decoder,
    parse_ebno_range,
    q_function,
    read_csv,
    run_attention_timing,
    run_ber,
    run_timing,
    time_call,
    to_csv,
    uncoded_bpsk_ber,
    uncoded_decoder,
)
from ecctlin.codes import Code

CODE = Code.regular(26, 3, 6, seed=7)


class TestHelpers:
    def test_parse_range(self):
        assert parse_ebno_range("2:1:8") == [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
        assert parse_ebno_range("0:0.5:1") == [0.0, 0.5, 1.0]
        assert parse_ebno_range("4,6,8") == [4.0, 6.0, 8.0]
        with pytest.raises(ValueError):
            parse_ebno_range("1:0:3")

    def test_q_function(self):
        assert q_function(0.0) == 0.5
        assert q_function(1.0) == pytest.approx(0.15865525393145707, rel=1e-12)
        assert uncoded_bpsk_ber(9.6) == pytest.approx(q_function(math.sqrt(2 * 10**0.96)), rel=1e-15)
        assert uncoded_bpsk_ber(9.6) == pytest.approx(1.0e-5, rel=0.03)

    def test_loglog_slope(self):
        n = np.array([128, 256, 512, 1024])
        assert loglog_slope(n, 3e-6 * n**2) == pytest.approx(2.0)
        assert loglog_slope(n, 5 * n) == pytest.approx(1.0)

    def test_time_call_needs_five_runs(self):
        with pytest.raises(ValueError):
            time_call(lambda: None, 4)
        med, iqr = time_call(lambda: sum(range(100)), 5)
        assert med >= 0 and iqr >= 0

    def test_config_hash_sensitivity(self):
        base = {"seed": 1, "ebno": [1.0, 2.0], "decoder": "bp:1"}
        assert config_hash(base) == config_hash(dict(reversed(list(base.items()))))
        for key, val in (("seed", 2), ("ebno", [1.0, 2.5]), ("decoder", "bp:2")):
            assert config_hash({**base, key: val}) != config_hash(base)


class TestDecoders:
    def test_make_decoder(self):
        assert make_decoder("uncoded", None).name == "uncoded"
        dec = make_decoder("bp:5", CODE)
        assert dec.meta["iterations"] == 5 and dec.meta["early_stop"]
        assert not make_decoder("bp:5:noearly", CODE).meta["early_stop"]
        with pytest.raises(ValueError):
            make_decoder("bp:x", CODE)
        with pytest.raises(ValueError):
            make_decoder("bp:3", None)


class TestRunBer:
    def test_empty_list(self):
        with pytest.raises(ValueError):
            run_ber(uncoded_decoder(), [])

    def test_noiseless_limit(self):
        for dec in (uncoded_decoder(), bp_decoder(CODE, 1)):
            rep = run_ber(dec, [40.0], stop=StopRule(max_bits=10**5), block_length=26)
            assert rep.points[0].bit_errors == 0
            assert rep.points[0].bits >= 10**5

    def test_deterministic(self):
        dec = bp_decoder(CODE, 3)
        kw = dict(stop=StopRule(max_bits=2 * 10**4), seed=5, record_time=False)
        a = run_ber(dec, [1.0, 3.0], **kw)
        b = run_ber(dec, [1.0, 3.0], **kw)
        assert to_csv(a) == to_csv(b)
        assert to_csv(run_ber(dec, [1.0, 3.0], **{**kw, "seed": 6})) != to_csv(a)

    def test_stop_rule(self):
        rep = run_ber(uncoded_decoder(), [0.0], stop=StopRule(max_bits=10**7, target_errors=100), batch_size=10)
        p = rep.points[0]
        # stops on the first batch that reaches the target
        assert 100 <= p.bit_errors < 100 + 10 * 1000
        rep = run_ber(uncoded_decoder(), [12.0], stop=StopRule(max_bits=5000, target_errors=100))
        assert rep.points[0].bits == 5000

    def test_ber_and_bler_fields(self):
        rep = run_ber(bp_decoder(CODE, 1), [2.0], stop=StopRule(max_bits=26 * 2000), record_time=False)
        p = rep.points[0]
        assert p.ber == p.bit_errors / p.bits
        assert rep.bler(p) == p.block_errors / (p.bits // 26)
        assert p.block_errors <= p.bit_errors

    def test_non_monotone_flagged(self):
        from ecctlin.bench import _non_monotone

        pts = [BerPoint(1.0, 10**6, 100, 50, 0.0), BerPoint(2.0, 10**6, 1000, 400, 0.0)]
        assert _non_monotone(pts) == [[1.0, 2.0]]
        assert _non_monotone(pts[::-1][:1]) == []

    @pytest.mark.slow
    def test_uncoded_at_9_6_db(self):
        rep = run_ber(uncoded_decoder(), [9.6], stop=StopRule(max_bits=10**9, target_errors=2000), seed=2)
        p = rep.points[0]
        assert p.bits >= 10**7
        assert abs(p.ber / uncoded_bpsk_ber(9.6) - 1) < 0.05

    def test_calibration_metadata(self):
        cal = calibration_check((4.0,), target_errors=2000)
        assert cal["passed"] and cal["points"][0]["bit_errors"] >= 2000
        bad = calibration_check((4.0,), target_errors=2000, tolerance=1e-9)
        assert not bad["passed"]


class TestEmit:
    def report(self, npts=3):
        pts = [BerPoint(float(i), 1000 * (i + 1), 7 * i + 1, i + 1, 0.125 * i) for i in range(npts)]
        return BerReport("bp:1", 26, 13, pts, {"x": 1}, config_hash({"x": 1}))

    def test_header_and_rows(self):
        lines = to_csv(self.report()).splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 4

    def test_round_trip(self):
        text = to_csv(self.report())
        assert to_csv(read_csv(text)) == text

    def test_ber_column_consistent(self):
        text = to_csv(self.report(5))
        for row in text.splitlines()[1:]:
            f = dict(zip(CSV_COLUMNS, row.split(",")))
            assert f["ber"] == f"{int(f['bit_errors']) / int(f['bits']):.9g}"

    def test_json_and_files(self, tmp_path):
        import json

        rep = self.report()
        out = json.loads(emit(rep, "json", tmp_path / "r.json"))
        assert out["config_hash"] == rep.config_hash and len(out["points"]) == 3
        assert (tmp_path / "r.json").read_text() == emit(rep, "json")
        with pytest.raises(ValueError):
            emit(rep, "xml")

    def test_bad_csv(self):
        with pytest.raises(ValueError):
            read_csv("a,b\n1,2\n")


class TestTiming:
    def test_full_model_cells(self):
        rep = run_timing(["bp:1", "linear"], [24, 48], batch_size=2, fixed_k=16)
        assert len(rep.cells) == 4
        assert all(c.repetitions == 5 and c.median > 0 for c in rep.cells)
        assert set(rep.slopes) == {"bp:1", "linear"}
        with pytest.raises(ValueError):
            run_timing(["sparse"], [24])

    def test_attention_timing_flops(self):
        rep = run_attention_timing([32, 64], proj_dim=8, batch_size=1, repetitions=5)
        assert rep.flops["standard"][1] == 4 * rep.flops["standard"][0]
        assert rep.flops["linear"][1] == 2 * rep.flops["linear"][0]
        assert {c.decoder for c in rep.cells} == {"standard", "linear"}
