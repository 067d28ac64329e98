"""Ensemble solver and CSV ingestion tests.

The oracle for the weighted least-squares solve is the normal-equations
solution on a well-conditioned design, where the pseudo-inverse route
must agree to near machine precision.
"""

import numpy as np
import pytest

from kdre.ensemble import (
    DEFAULT_RCOND_GRID,
    EnsembleProblem,
    accuracy_over_rconds,
    combine_predictions,
    evaluate_ensemble,
    ingest_candidates,
    model_weights,
    solve_ensemble,
)
from kdre.kernels import GaussianKernel
from kdre.losses import get_family
from kdre.solver import RatioModel
from kdre.validation import InvalidInputError


def _binary_problem(seed=110, n=120, k=4, weights=None):
    rng = np.random.default_rng(seed)
    preds = rng.normal(0, 1, (n, k))
    labels = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    w = np.ones(n) if weights is None else weights
    return EnsembleProblem(predictions=preds, labels=labels, weights=w)


class TestEnsembleProblem:
    def test_binary_flags(self):
        prob = _binary_problem()
        assert not prob.is_multiclass
        assert prob.n_candidates == 4

    def test_shape_validation(self):
        with pytest.raises(InvalidInputError, match="predictions"):
            EnsembleProblem(np.zeros(5), np.ones(5), np.ones(5))
        with pytest.raises(InvalidInputError, match="weights"):
            EnsembleProblem(np.zeros((5, 2)), np.ones(5), np.ones(4))

    def test_weight_validation(self):
        with pytest.raises(InvalidInputError, match="nonnegative"):
            EnsembleProblem(np.zeros((3, 1)), np.ones(3), np.array([1.0, -0.1, 1.0]))
        with pytest.raises(InvalidInputError, match="finite"):
            EnsembleProblem(np.zeros((3, 1)), np.ones(3), np.array([1.0, np.nan, 1.0]))

    def test_binary_label_validation(self):
        with pytest.raises(InvalidInputError, match="binary"):
            EnsembleProblem(np.zeros((3, 1)), np.array([1.0, 0.0, -1.0]), np.ones(3))

    def test_multiclass_label_validation(self):
        preds = np.zeros((3, 2, 4))
        with pytest.raises(InvalidInputError, match="class labels"):
            EnsembleProblem(preds, np.array([0, 1, 4]), np.ones(3))

    def test_binary_design_is_passthrough(self):
        prob = _binary_problem()
        a, b, w = prob.design()
        assert a is prob.predictions
        assert np.array_equal(b, prob.labels)
        assert np.array_equal(w, prob.weights)

    def test_multiclass_design_layout(self):
        preds = np.array(
            [[[1.0, 2, 3], [4, 5, 6]], [[7.0, 8, 9], [10, 11, 12]]]
        )  # (n=2, k=2, c=3)
        prob = EnsembleProblem(preds, np.array([2, 0]), np.array([0.5, 2.0]))
        a, b, w = prob.design()
        expected_a = np.array(
            [[1, 4], [2, 5], [3, 6], [7, 10], [8, 11], [9, 12]], dtype=float
        )
        assert np.array_equal(a, expected_a)
        assert np.array_equal(b, [0, 0, 1, 1, 0, 0])
        assert np.array_equal(w, [0.5, 0.5, 0.5, 2, 2, 2])


class TestSolveEnsemble:
    def test_matches_normal_equations(self):
        rng = np.random.default_rng(111)
        n, k = 200, 5
        a = rng.normal(0, 1, (n, k))
        y = rng.normal(0, 1, n)
        w = rng.uniform(0.5, 2.0, n)
        prob = EnsembleProblem(a, np.sign(y) + (y == 0), w)
        # weighted normal equations on the same design and targets
        prob_targets = EnsembleProblem(a, np.where(y >= 0, 1.0, -1.0), w)
        aw = np.sqrt(w)[:, None] * a
        bw = np.sqrt(w) * prob_targets.labels
        oracle = np.linalg.solve(aw.T @ aw, aw.T @ bw)
        got = solve_ensemble(prob_targets, rcond=1e-10)
        assert np.allclose(got, oracle, atol=1e-10)

    def test_perfect_candidate_gets_unit_coefficient(self):
        rng = np.random.default_rng(112)
        n = 300
        labels = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        noise = rng.normal(0, 1, (n, 3))
        preds = np.column_stack([labels, noise])
        prob = EnsembleProblem(preds, labels, np.ones(n))
        for rcond in DEFAULT_RCOND_GRID:
            coeffs = solve_ensemble(prob, rcond)
            assert coeffs[0] == pytest.approx(1.0, abs=1e-10)
            assert np.max(np.abs(coeffs[1:])) < 1e-10

    def test_duplicate_candidates_share_weight(self):
        rng = np.random.default_rng(113)
        n = 150
        base = rng.normal(0, 1, n)
        other = rng.normal(0, 1, n)
        labels = np.where(base + 0.5 * other > 0, 1.0, -1.0)
        preds = np.column_stack([base, base, other])
        prob = EnsembleProblem(preds, labels, np.ones(n))
        coeffs = solve_ensemble(prob, 1e-6)
        # min-norm solution splits the duplicated column evenly
        assert coeffs[0] == pytest.approx(coeffs[1], abs=1e-8)
        single = solve_ensemble(
            EnsembleProblem(np.column_stack([base, other]), labels, np.ones(n)), 1e-6
        )
        assert coeffs[0] + coeffs[1] == pytest.approx(single[0], abs=1e-8)
        assert coeffs[2] == pytest.approx(single[1], abs=1e-8)

    def test_weight_rescaling_invariance(self):
        rng = np.random.default_rng(114)
        prob = _binary_problem(seed=114, weights=rng.uniform(0.1, 3.0, 120))
        scaled = EnsembleProblem(
            prob.predictions, prob.labels, 10.0 * prob.weights
        )
        for rcond in (1e-4, 1e-1):
            a = solve_ensemble(prob, rcond)
            b = solve_ensemble(scaled, rcond)
            assert np.allclose(a, b, atol=1e-10)

    def test_rcond_bounds(self):
        prob = _binary_problem()
        for bad in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(InvalidInputError, match="rcond"):
                solve_ensemble(prob, bad)

    def test_truncate_unweighted_stays_in_retained_subspace(self):
        # Two near-collinear candidates differing only on sample 0, which
        # carries a huge weight: the unweighted spectrum cuts the
        # difference direction at this rcond while the weighted one keeps
        # it, so the two modes must genuinely diverge.
        rng = np.random.default_rng(115)
        n = 50
        base = rng.normal(0, 1, n)
        base[0] = 0.01
        col2 = base.copy()
        col2[0] += 1e-3
        preds = np.column_stack([base, col2])
        labels = np.where(base > 0, 1.0, -1.0)
        w = np.ones(n)
        w[0] = 1e5
        prob = EnsembleProblem(preds, labels, w)
        rcond = 1e-2
        _, svals, vt = np.linalg.svd(preds, full_matrices=False)
        svals_w = np.linalg.svd(np.sqrt(w)[:, None] * preds, compute_uv=False)
        assert svals[1] < rcond * svals[0]
        assert svals_w[1] > rcond * svals_w[0]
        coeffs = solve_ensemble(prob, rcond, truncate_unweighted=True)
        assert abs(vt[1] @ coeffs) < 1e-12
        plain = solve_ensemble(prob, rcond)
        assert np.linalg.norm(coeffs - plain) > 1.0
        assert np.linalg.norm(coeffs) < np.linalg.norm(plain)


class TestCombineEvaluate:
    def test_binary_combination(self):
        preds = np.array([[1.0, 2.0], [3.0, -1.0]])
        assert np.array_equal(
            combine_predictions(preds, [0.5, 1.0]), [2.5, 0.5]
        )

    def test_multiclass_combination(self):
        preds = np.array([[[1.0, 0.0], [0.0, 1.0]]])  # (1, 2, 2)
        out = combine_predictions(preds, [2.0, 3.0])
        assert np.array_equal(out, [[2.0, 3.0]])

    def test_binary_tie_goes_positive(self):
        preds = np.array([[1.0], [-0.0]])
        assert evaluate_ensemble(preds, [1.0, 1.0], [0.0]) == 1.0
        assert evaluate_ensemble(preds, [-1.0, -1.0], [0.0]) == 0.0

    def test_multiclass_accuracy(self):
        preds = np.zeros((3, 1, 3))
        preds[0, 0] = [3, 1, 0]
        preds[1, 0] = [0, 2, 1]
        preds[2, 0] = [0, 1, 5]
        acc = evaluate_ensemble(preds, [0, 1, 0], [1.0])
        assert acc == pytest.approx(2.0 / 3.0)


class TestAccuracyOverRconds:
    def test_perfect_candidate_scores_one_everywhere(self):
        rng = np.random.default_rng(116)
        n = 200
        labels = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        preds = np.column_stack([labels, rng.normal(0, 1, (n, 2))])
        prob = EnsembleProblem(preds, labels, np.ones(n))
        test_labels = np.where(rng.random(80) < 0.5, 1.0, -1.0)
        test_preds = np.column_stack([test_labels, rng.normal(0, 1, (80, 2))])
        mean_acc, rows = accuracy_over_rconds(prob, test_preds, test_labels)
        assert mean_acc == 1.0
        assert len(rows) == len(DEFAULT_RCOND_GRID)
        assert all(r["accuracy"] == 1.0 for r in rows)

    def test_mean_is_average_of_rows(self):
        prob = _binary_problem(117)
        rng = np.random.default_rng(118)
        test_preds = rng.normal(0, 1, (50, 4))
        test_labels = np.where(rng.random(50) < 0.5, 1.0, -1.0)
        mean_acc, rows = accuracy_over_rconds(prob, test_preds, test_labels)
        assert mean_acc == pytest.approx(np.mean([r["accuracy"] for r in rows]))

    def test_pure_noise_near_chance(self):
        rng = np.random.default_rng(119)
        n, n_test = 400, 2000
        prob = EnsembleProblem(
            rng.normal(0, 1, (n, 3)),
            np.where(rng.random(n) < 0.5, 1.0, -1.0),
            np.ones(n),
        )
        test_preds = rng.normal(0, 1, (n_test, 3))
        test_labels = np.where(rng.random(n_test) < 0.5, 1.0, -1.0)
        mean_acc, _ = accuracy_over_rconds(prob, test_preds, test_labels)
        assert 0.45 <= mean_acc <= 0.55


class TestModelWeights:
    def test_negative_ratios_floored(self):
        # a zero-coefficient quadratic-loss model maps every score to a
        # negative ratio, which must be floored to 0 for weighting
        model = RatioModel(
            kernel=GaussianKernel(1.0),
            family=get_family("sq"),
            anchors=np.zeros((1, 2)),
            coeffs=np.zeros(1),
            lam=1.0,
            t=1,
            n_p=1,
            n_q=0,
        )
        w = model_weights(model, np.zeros((4, 2)))
        assert np.array_equal(w, np.zeros(4))

    def test_positive_ratios_untouched(self):
        model = RatioModel(
            kernel=GaussianKernel(1.0),
            family=get_family("kulsif"),
            anchors=np.zeros((1, 2)),
            coeffs=np.array([2.0]),
            lam=1.0,
            t=1,
            n_p=1,
            n_q=0,
        )
        w = model_weights(model, np.zeros((3, 2)))
        assert np.allclose(w, 2.0)


def _write(path, text):
    path.write_text(text)
    return str(path)


class TestIngestCandidates:
    def test_binary_join(self, tmp_path):
        labels = _write(
            tmp_path / "labels.csv", "sample_id,label\na,1\nb,-1\nc,1\n"
        )
        c1 = _write(tmp_path / "c1.csv", "sample_id,score\nb,0.2\na,0.5\nc,-0.3\n")
        c2 = _write(tmp_path / "c2.csv", "sample_id,score\na,1.5\nb,-1.5\nc,0.0\n")
        prob = ingest_candidates(labels, [c1, c2])
        # label file fixes the order regardless of candidate row order
        assert np.array_equal(prob.predictions, [[0.5, 1.5], [0.2, -1.5], [-0.3, 0.0]])
        assert np.array_equal(prob.labels, [1.0, -1.0, 1.0])
        assert np.array_equal(prob.weights, np.ones(3))
        assert prob.candidate_names == [c1, c2]

    def test_weight_file(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,1\nb,-1\n")
        c1 = _write(tmp_path / "c1.csv", "sample_id,score\na,0.1\nb,0.2\n")
        weights = _write(tmp_path / "w.csv", "sample_id,weight\nb,2.5\na,0.5\n")
        prob = ingest_candidates(labels, [c1], weight_path=weights)
        assert np.array_equal(prob.weights, [0.5, 2.5])

    def test_missing_sample_named(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,1\nb,-1\n")
        c1 = _write(tmp_path / "c1.csv", "sample_id,score\na,0.1\n")
        with pytest.raises(InvalidInputError, match=r"c1\.csv: missing sample_id 'b'"):
            ingest_candidates(labels, [c1])

    def test_extra_sample_named_with_row(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,1\n")
        c1 = _write(tmp_path / "c1.csv", "sample_id,score\na,0.1\nzz,0.9\n")
        with pytest.raises(InvalidInputError, match=r"row 3 has sample_id 'zz'"):
            ingest_candidates(labels, [c1])

    def test_duplicate_sample_rejected(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,1\na,-1\n")
        with pytest.raises(InvalidInputError, match="duplicate sample_id 'a' at row 3"):
            ingest_candidates(labels, [])

    def test_bad_header_rejected(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "id,label\na,1\n")
        with pytest.raises(InvalidInputError, match="sample_id"):
            ingest_candidates(labels, [])

    def test_nonnumeric_score_row_named(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,1\n")
        c1 = _write(tmp_path / "c1.csv", "sample_id,score\na,oops\n")
        with pytest.raises(InvalidInputError, match="row 2 has non-numeric"):
            ingest_candidates(labels, [c1])

    def test_negative_weight_row_named(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,1\nb,1\n")
        c1 = _write(tmp_path / "c1.csv", "sample_id,score\na,0.1\nb,0.2\n")
        weights = _write(tmp_path / "w.csv", "sample_id,weight\na,1.0\nb,-2.0\n")
        with pytest.raises(InvalidInputError, match="row 3 has negative weight"):
            ingest_candidates(labels, [c1], weight_path=weights)

    def test_bad_score_columns_rejected(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,1\n")
        c1 = _write(tmp_path / "c1.csv", "sample_id,value\na,0.1\n")
        with pytest.raises(InvalidInputError, match="columns must be"):
            ingest_candidates(labels, [c1])

    def test_multiclass_join(self, tmp_path):
        labels = _write(
            tmp_path / "labels.csv", "sample_id,label\na,cat\nb,dog\n"
        )
        c1 = _write(
            tmp_path / "c1.csv",
            "sample_id,score_cat,score_dog\na,0.9,0.1\nb,0.2,0.8\n",
        )
        c2 = _write(
            tmp_path / "c2.csv",
            "sample_id,score_cat,score_dog\na,0.6,0.4\nb,0.3,0.7\n",
        )
        prob = ingest_candidates(labels, [c1, c2])
        assert prob.is_multiclass
        assert prob.class_names == ["cat", "dog"]
        assert prob.predictions.shape == (2, 2, 2)
        assert np.array_equal(prob.labels, [0, 1])
        assert prob.predictions[0, 0, 0] == 0.9
        assert prob.predictions[1, 1, 1] == 0.7

    def test_multiclass_class_mismatch(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,cat\n")
        c1 = _write(tmp_path / "c1.csv", "sample_id,score_cat,score_dog\na,0.9,0.1\n")
        c2 = _write(tmp_path / "c2.csv", "sample_id,score_cat,score_fox\na,0.6,0.4\n")
        with pytest.raises(InvalidInputError, match="disagree"):
            ingest_candidates(labels, [c1, c2])

    def test_mixing_binary_and_multiclass(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,1\n")
        c1 = _write(tmp_path / "c1.csv", "sample_id,score\na,0.5\n")
        c2 = _write(tmp_path / "c2.csv", "sample_id,score_1,score_-1\na,0.6,0.4\n")
        with pytest.raises(InvalidInputError, match="mixes"):
            ingest_candidates(labels, [c1, c2])

    def test_label_outside_classes(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,bird\n")
        c1 = _write(tmp_path / "c1.csv", "sample_id,score_cat,score_dog\na,0.9,0.1\n")
        with pytest.raises(InvalidInputError, match="'bird' is not a candidate class"):
            ingest_candidates(labels, [c1])

    def test_no_candidates_rejected(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\na,1\n")
        with pytest.raises(InvalidInputError, match="no candidate"):
            ingest_candidates(labels, [])

    def test_empty_label_file_rejected(self, tmp_path):
        labels = _write(tmp_path / "labels.csv", "sample_id,label\n")
        with pytest.raises(InvalidInputError, match="no samples"):
            ingest_candidates(labels, [])
