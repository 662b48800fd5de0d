import json

import numpy as np
import pytest

from mvrate import (
    OptimizationProblem,
    RateModel,
    SelectorPolicy,
    SourceModel,
    VideoRecord,
    bin_overlap,
    evaluate_policy,
    grid_oracle,
    load_manifest,
    rate_table,
)
from mvrate.harness import format_empirical_report, format_rate_table
from mvrate.errors import (
    EmptyDataset,
    InvariantViolation,
    MalformedLine,
    MissingCorrectnessBit,
    MissingField,
    MissingRequiredField,
    NonPositiveBinWidth,
    NonPositiveStep,
)

RATES = RateModel(a_3d=2.21, b_3d=9.04, a_2d=0.83, b_2d=4.27)


def record(id="v", codec="avc", qp=40, r_motion=10.0, i_sp=5.0, **kw):
    return VideoRecord(id=id, codec=codec, qp=qp, r_motion=r_motion,
                       i_sp=i_sp, **kw)


def write_manifest(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n",
                    encoding="utf-8")


class TestVideoRecord:
    def test_minimal_record(self):
        rec = record()
        assert rec.r_cropped is None
        assert rec.correct_3d is None

    def test_qp_out_of_range(self):
        with pytest.raises(InvariantViolation):
            record(qp=52)
        with pytest.raises(InvariantViolation):
            record(qp=-1)

    def test_unknown_codec(self):
        with pytest.raises(InvariantViolation):
            record(codec="av1")

    def test_cropped_cannot_exceed_original(self):
        with pytest.raises(InvariantViolation):
            record(r_cropped=10.0, r_orig=9.0)

    def test_negative_rates_rejected(self):
        with pytest.raises(InvariantViolation):
            record(r_motion=-1.0)
        with pytest.raises(InvariantViolation):
            record(i_sp=-0.5)


class TestLoadManifest:
    def test_single_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [{"id": "v1", "codec": "avc", "qp": 40,
                               "r_motion": 18.5, "i_sp": 5.2}])
        records = load_manifest(path)
        assert len(records) == 1
        assert records[0].id == "v1"
        assert records[0].r_motion == 18.5

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('\n{"id":"a","codec":"hevc","qp":0,"r_motion":1,'
                        '"i_sp":2}\n\n', encoding="utf-8")
        assert len(load_manifest(path)) == 1

    def test_malformed_line_carries_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"id":"a","codec":"avc","qp":1,"r_motion":1,"i_sp":1}\n'
                        "not json\n", encoding="utf-8")
        with pytest.raises(MalformedLine) as exc:
            load_manifest(path)
        assert exc.value.line == 2

    def test_invariant_violation_carries_line_and_field(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [
            {"id": "a", "codec": "avc", "qp": 1, "r_motion": 1, "i_sp": 1},
            {"id": "b", "codec": "avc", "qp": 52, "r_motion": 1, "i_sp": 1},
        ])
        with pytest.raises(InvariantViolation) as exc:
            load_manifest(path)
        assert exc.value.line == 2
        assert exc.value.field == "qp"

    def test_missing_required_field(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [{"id": "a", "codec": "avc", "qp": 1, "i_sp": 1}])
        with pytest.raises(MissingRequiredField) as exc:
            load_manifest(path)
        assert exc.value.field == "r_motion"
        assert exc.value.line == 1

    def test_unknown_keys_ignored(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [{"id": "a", "codec": "avc", "qp": 1,
                               "r_motion": 1, "i_sp": 1, "note": "extra"}])
        assert load_manifest(path)[0].id == "a"


class TestEvaluatePolicy:
    def test_all_correct_bits_give_unit_accuracy(self):
        records = [record(id=f"v{i}", r_motion=float(i * 7),
                          correct_3d=True, correct_2d=True, correct_sp=True)
                   for i in range(10)]
        report = evaluate_policy(records, SelectorPolicy(5.0, 25.0), RATES)
        assert report.empirical_accuracy == 1.0
        assert report.n_videos == 10
        assert (report.routed_3d + report.routed_2d + report.routed_sp) == 10

    def test_zero_policy_routes_all_spatial(self):
        records = [record(id=f"v{i}", r_motion=float(i + 1),
                          i_sp=float(2 + i), correct_sp=True)
                   for i in range(5)]
        report = evaluate_policy(records, SelectorPolicy(0.0, 0.0), RATES)
        assert report.routed_sp == 5
        assert report.empirical_r_sent == pytest.approx(
            np.mean([rec.i_sp for rec in records]))

    def test_temporal_routes_use_linear_costs(self):
        records = [record(id="a", r_motion=2.0, correct_3d=True),
                   record(id="b", r_motion=10.0, correct_2d=False)]
        report = evaluate_policy(records, SelectorPolicy(5.0, 50.0), RATES)
        expect = (RATES.rate_3d(2.0) + RATES.rate_2d(10.0)) / 2.0
        assert report.empirical_r_sent == pytest.approx(expect)
        assert report.empirical_accuracy == 0.5

    def test_missing_bit_raises_with_id(self):
        records = [record(id="needsbit", r_motion=1.0)]
        with pytest.raises(MissingCorrectnessBit, match="needsbit"):
            evaluate_policy(records, SelectorPolicy(5.0, 50.0), RATES)

    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset):
            evaluate_policy([], SelectorPolicy(1.0, 2.0), RATES)

    def test_model_predictions_attached_when_triple_given(self):
        rng = np.random.default_rng(21)
        r = rng.gamma(2.43, 1.0 / 0.13, size=400)
        records = [record(id=f"v{i}", r_motion=float(x),
                          correct_3d=True, correct_2d=True, correct_sp=False)
                   for i, x in enumerate(r)]
        policy = SelectorPolicy(8.0, 40.0, acc_3d=0.9, acc_2d=0.85, acc_sp=0.7)
        report = evaluate_policy(records, policy, RATES)
        assert report.model_accuracy is not None
        assert 0.7 <= report.model_accuracy <= 0.9
        assert report.model_r_sent is not None

    def test_deterministic_reports(self):
        records = [record(id=f"v{i}", r_motion=float(i), correct_3d=True,
                          correct_2d=False, correct_sp=True)
                   for i in range(1, 30)]
        policy = SelectorPolicy(6.0, 18.0)
        a = evaluate_policy(records, policy, RATES)
        b = evaluate_policy(records, policy, RATES)
        assert a == b
        assert format_empirical_report(a) == format_empirical_report(b)


class TestBinOverlap:
    def test_single_video_lands_in_second_bin(self):
        records = [record(r_motion=7.0, correct_3d=True, correct_2d=False)]
        bins = bin_overlap(records, 5.0)
        assert bins[1].bin_low == 5.0
        assert bins[1].bin_high == 10.0
        assert bins[1].count_correct_3d == 1
        assert bins[1].count_correct_2d == 0

    def test_all_false_bits_count_zero(self):
        records = [record(id=f"v{i}", r_motion=float(i + 1),
                          correct_3d=False, correct_2d=False)
                   for i in range(8)]
        bins = bin_overlap(records, 2.0)
        assert sum(b.count_correct_3d for b in bins) == 0
        assert sum(b.count_correct_2d for b in bins) == 0

    def test_counts_sum_to_true_bits(self, rng):
        records = [record(id=f"v{i}", r_motion=float(rng.uniform(0, 60)),
                          correct_3d=bool(rng.integers(2)),
                          correct_2d=bool(rng.integers(2)))
                   for i in range(200)]
        bins = bin_overlap(records, 7.5)
        assert sum(b.count_correct_3d for b in bins) \
            == sum(bool(r.correct_3d) for r in records)
        assert sum(b.count_correct_2d for b in bins) \
            == sum(bool(r.correct_2d) for r in records)

    def test_max_rate_lands_in_last_bin(self):
        records = [record(id="a", r_motion=10.0, correct_3d=True,
                          correct_2d=True),
                   record(id="b", r_motion=4.0, correct_3d=True,
                          correct_2d=True)]
        bins = bin_overlap(records, 5.0)
        assert len(bins) == 2
        assert bins[0].count_correct_3d == 1
        assert bins[-1].count_correct_3d == 1

    def test_bad_width_and_missing_bits(self):
        with pytest.raises(NonPositiveBinWidth):
            bin_overlap([record(correct_3d=True, correct_2d=True)], 0.0)
        with pytest.raises(MissingCorrectnessBit):
            bin_overlap([record(correct_3d=True)], 5.0)
        with pytest.raises(EmptyDataset):
            bin_overlap([], 5.0)


class TestRateTable:
    def test_reference_avc_row(self):
        rows = rate_table([record(codec="avc", qp=0, r_orig=4273.0,
                                  r_cropped=321.3, r_motion=155.4)])
        row = rows[0]
        assert row.mean_r_orig == 4273.0
        assert row.mean_r_cropped == 321.3
        assert row.mean_r_motion == 155.4
        text = format_rate_table(rows)
        assert "3.6" in text and "48.3" in text

    def test_reference_hevc_row(self):
        rows = rate_table([record(codec="hevc", qp=51, r_orig=10.9,
                                  r_cropped=9.8, r_motion=0.8)])
        text = format_rate_table(rows)
        assert "7.3" in text and "8.1" in text

    def test_group_means_are_arithmetic(self):
        rows = rate_table([
            record(id="a", codec="avc", qp=30, r_orig=100.0, r_cropped=50.0,
                   r_motion=20.0),
            record(id="b", codec="avc", qp=30, r_orig=200.0, r_cropped=70.0,
                   r_motion=40.0),
        ])
        assert len(rows) == 1
        assert rows[0].mean_r_orig == 150.0
        assert rows[0].mean_r_cropped == 60.0
        assert rows[0].mean_r_motion == 30.0

    def test_percentage_scale_invariance(self):
        base = [record(id="a", codec="avc", qp=30, r_orig=100.0,
                       r_cropped=50.0, r_motion=20.0)]
        scaled = [record(id="a", codec="avc", qp=30, r_orig=300.0,
                         r_cropped=150.0, r_motion=60.0)]
        assert rate_table(base)[0].pct_motion_orig \
            == pytest.approx(rate_table(scaled)[0].pct_motion_orig)

    def test_groups_sorted_by_codec_then_qp(self):
        rows = rate_table([
            record(id="a", codec="hevc", qp=30, r_orig=1, r_cropped=1,
                   r_motion=1),
            record(id="b", codec="avc", qp=51, r_orig=1, r_cropped=1,
                   r_motion=1),
            record(id="c", codec="avc", qp=0, r_orig=1, r_cropped=1,
                   r_motion=1),
        ])
        assert [(r.codec, r.qp) for r in rows] \
            == [("avc", 0), ("avc", 51), ("hevc", 30)]

    def test_missing_fields_rejected(self):
        with pytest.raises(MissingField):
            rate_table([record()])


class TestGridOracle:
    def problem(self, budget, i_sp=3.0):
        return OptimizationProblem(
            source=SourceModel(2.43, 0.13), rates=RATES, i_sp=i_sp,
            acc_3d=0.9, acc_2d=0.85, acc_sp=0.7, r_available=budget)

    def test_zero_only_grid_with_idr_budget(self):
        problem = self.problem(budget=3.0)
        result = grid_oracle(problem, step=200.0, upper=100.0)
        assert result.feasible
        assert result.policy.r_low == 0.0
        assert result.policy.r_high == 0.0
        assert result.predicted_accuracy == pytest.approx(0.7)

    def test_huge_budget_returns_all_3d_corner(self):
        problem = self.problem(budget=1e6)
        result = grid_oracle(problem, step=1.0, upper=120.0)
        assert result.policy.r_low == result.policy.r_high
        assert result.predicted_accuracy == pytest.approx(0.9, abs=1e-3)

    def test_infeasible_budget_flagged(self):
        problem = self.problem(budget=1.0, i_sp=3.0)
        result = grid_oracle(problem, step=1.0, upper=50.0)
        assert not result.feasible

    def test_nonpositive_step_rejected(self):
        with pytest.raises(NonPositiveStep):
            grid_oracle(self.problem(10.0), step=0.0)

    def test_tie_break_prefers_cheaper_policy(self):
        # equal accuracies make every policy tie at the same accuracy;
        # the oracle must then pick the cheapest, smallest thresholds
        problem = OptimizationProblem(
            source=SourceModel(2.43, 0.13), rates=RATES, i_sp=3.0,
            acc_3d=0.8, acc_2d=0.8, acc_sp=0.8, r_available=40.0)
        result = grid_oracle(problem, step=5.0, upper=50.0)
        assert result.policy.r_low == 0.0
        assert result.policy.r_high == 0.0
        assert result.predicted_sent_rate == pytest.approx(3.0)
