"""Solver tests: closed-form KuLSIF recursion, nonlinear CG, serialization.

The independent oracle for the recursion is a dense linear solve of the
stationarity system of each sub-problem, plus a derivative-free
minimization of the objective itself on a tiny instance.  CG is checked
against the closed form on KuLSIF, where both must find the same optimum.
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from kdre.kernels import GaussianKernel, gram, median_bandwidth
from kdre.losses import empirical_risk, get_family
from kdre.solver import (
    FitReport,
    LineSearchFailure,
    RatioModel,
    cg_coefficient_path,
    empirical_objective,
    fit_cg,
    fit_kulsif,
    kulsif_coefficient_path,
    load_model,
    model_from_dict,
    model_to_dict,
    predict_ratio,
    predict_score,
    save_model,
)
from kdre.validation import InvalidInputError

UNIT_KERNEL = GaussianKernel(1.0)


def _random_pair(rng, m, n, dim=2, shift=0.4):
    x_p = rng.normal(0.0, 1.0, (m, dim))
    x_q = rng.normal(shift, 1.0, (n, dim))
    return x_p, x_q


def _dense_path(x_p, x_q, kernel, lam, t):
    """Oracle: solve the stationarity system of each sub-problem densely.

    For KuLSIF the pooled objective is quadratic, so its exact minimizer
    satisfies (lam*I + S K / N) a = lam * a_prev + e_p / N where S zeroes
    the numerator rows (their loss is linear) and e_p indicates them.
    """
    anchors = np.vstack([np.asarray(x_p, float), np.asarray(x_q, float)])
    m = len(x_p)
    N = len(anchors)
    K = gram(kernel, anchors, anchors)
    S = np.diag(np.concatenate([np.zeros(m), np.ones(N - m)]))
    e_p = np.concatenate([np.ones(m), np.zeros(N - m)])
    prev = np.zeros(N)
    out = []
    for _ in range(t):
        sol = np.linalg.solve(lam * np.eye(N) + S @ K / N, lam * prev + e_p / N)
        out.append(sol)
        prev = sol
    return out


class TestKulsifHandCase:
    """m = n = 1 at the same point: every kernel value is 1 and the
    objective collapses to a two-variable quadratic solvable by hand."""

    def test_single_step_coefficients(self):
        anchors, m, n, path = kulsif_coefficient_path(
            [[0.0]], [[0.0]], UNIT_KERNEL, 1.0, 1
        )
        assert m == 1 and n == 1
        beta, alpha = path[0]
        # J(b, a) = (-(b+a) + (b+a)^2/2)/2 + ((b+a)^2)/2 over the pooled
        # pair; stationarity in the expansion gives b = 1/2, a = -1/6.
        assert beta == pytest.approx(0.5, abs=1e-14)
        assert alpha == pytest.approx(-1.0 / 6.0, abs=1e-14)

    def test_fitted_value_and_objective(self):
        model = fit_kulsif([[0.0]], [[0.0]], UNIT_KERNEL, 1.0, 1)
        assert predict_score(model, [0.0]) == pytest.approx(1.0 / 3.0, abs=1e-14)
        K = np.ones((2, 2))
        obj = empirical_objective("kulsif", K, 1, model.coeffs, np.zeros(2), 1.0)
        assert obj == pytest.approx(-1.0 / 12.0, abs=1e-14)

    def test_derivative_free_minimizer_agrees(self):
        # The Gram matrix is singular here, so coefficients are not
        # unique; compare objective values and the fitted value f(0).
        K = np.ones((2, 2))

        def objective(a):
            return empirical_objective("kulsif", K, 1, a, np.zeros(2), 1.0)

        res = minimize(
            objective,
            np.zeros(2),
            method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 2000},
        )
        _, _, _, path = kulsif_coefficient_path([[0.0]], [[0.0]], UNIT_KERNEL, 1.0, 1)
        assert objective(path[0]) == pytest.approx(res.fun, abs=1e-10)
        assert path[0].sum() == pytest.approx(res.x.sum(), abs=1e-5)


class TestRecursionAgainstDenseSolve:
    def test_small_instances(self):
        rng = np.random.default_rng(61)
        for trial in range(25):
            m = int(rng.integers(1, 4))
            n = int(rng.integers(1, 4))
            x_p, x_q = _random_pair(rng, m, n)
            lam = float(10.0 ** rng.uniform(-2.0, 1.0))
            kernel = GaussianKernel(float(rng.uniform(0.5, 2.0)))
            _, _, _, path = kulsif_coefficient_path(x_p, x_q, kernel, lam, 3)
            oracle = _dense_path(x_p, x_q, kernel, lam, 3)
            for k in range(3):
                assert np.max(np.abs(path[k] - oracle[k])) < 1e-8

    def test_beta_block_growth(self):
        # Numerator coefficients admit a closed form independent of the
        # data: each sub-problem adds 1/(lam*N) to every one of them.
        rng = np.random.default_rng(62)
        x_p, x_q = _random_pair(rng, 4, 7)
        lam = 0.3
        _, m, n, path = kulsif_coefficient_path(x_p, x_q, UNIT_KERNEL, lam, 5)
        N = m + n
        for k, coeffs in enumerate(path, start=1):
            assert np.allclose(coeffs[:m], k / (lam * N), rtol=0, atol=1e-15)

    def test_path_length_and_shapes(self):
        rng = np.random.default_rng(63)
        x_p, x_q = _random_pair(rng, 3, 5)
        anchors, m, n, path = kulsif_coefficient_path(x_p, x_q, UNIT_KERNEL, 1.0, 4)
        assert len(path) == 4
        assert anchors.shape == (8, 2)
        assert all(c.shape == (8,) for c in path)

    def test_duplicate_points_allowed(self):
        x = np.zeros((3, 1))
        model = fit_kulsif(x, x, UNIT_KERNEL, 0.5, 2)
        assert np.all(np.isfinite(model.coeffs))


class TestStationarity:
    def test_kulsif_path_gradient_vanishes(self):
        rng = np.random.default_rng(64)
        x_p, x_q = _random_pair(rng, 10, 15)
        lam = 0.1
        anchors, m, n, path = kulsif_coefficient_path(x_p, x_q, UNIT_KERNEL, lam, 3)
        K = gram(UNIT_KERNEL, anchors, anchors)
        N = m + n
        fam = get_family("kulsif")
        prev = np.zeros(N)
        for a in path:
            s = K @ a
            w = np.concatenate([fam.d1(1, s[:m]), fam.d1(-1, s[m:])]) / N
            w += lam * (a - prev)
            assert np.linalg.norm(K @ w) < 1e-8
            prev = a

    @pytest.mark.parametrize("family", ["lr", "exp", "sq"])
    def test_cg_meets_per_subproblem_tolerance(self, family):
        rng = np.random.default_rng(65)
        x_p, x_q = _random_pair(rng, 20, 25, shift=0.3)
        lam, t, eps = 0.1, 3, 1e-6
        anchors, m, n, path, report = cg_coefficient_path(
            x_p, x_q, family, UNIT_KERNEL, lam, t, target_eps=eps
        )
        K = gram(UNIT_KERNEL, anchors, anchors)
        N = m + n
        fam = get_family(family)
        prev = np.zeros(N)
        for k, a in enumerate(path, start=1):
            s = K @ a
            w = np.concatenate([fam.d1(1, s[:m]), fam.d1(-1, s[m:])]) / N
            w += lam * (a - prev)
            eps_k = eps * 1.4 ** (k - t) / t
            assert np.linalg.norm(K @ w) <= eps_k * (1 + 1e-9)
            assert report.grad_norms[k - 1] <= eps_k * (1 + 1e-9)
            prev = a


class TestCgMatchesClosedForm:
    @pytest.mark.parametrize("lam", [1e-2, 1.0])
    @pytest.mark.parametrize("t", [1, 3])
    def test_objective_gap(self, lam, t):
        rng = np.random.default_rng(66)
        for trial in range(2):
            x_p, x_q = _random_pair(rng, 30, 30)
            kernel = GaussianKernel(median_bandwidth(np.vstack([x_p, x_q])))
            exact = fit_kulsif(x_p, x_q, kernel, lam, t)
            approx, report = fit_cg(x_p, x_q, "kulsif", kernel, lam, t)
            K = gram(kernel, exact.anchors, exact.anchors)
            # Compare the final sub-problem objective, each centered at
            # its own previous iterate.
            _, _, _, path = kulsif_coefficient_path(x_p, x_q, kernel, lam, t)
            prev_exact = path[-2] if t > 1 else np.zeros(len(K))
            _, _, _, cg_path, _ = cg_coefficient_path(
                x_p, x_q, "kulsif", kernel, lam, t
            )
            prev_cg = cg_path[-2] if t > 1 else np.zeros(len(K))
            j_exact = empirical_objective("kulsif", K, 30, path[-1], prev_exact, lam)
            j_cg = empirical_objective("kulsif", K, 30, cg_path[-1], prev_cg, lam)
            assert abs(j_cg - j_exact) <= 1e-6 * max(1.0, abs(j_exact))

    def test_coefficients_close_when_gram_well_conditioned(self):
        rng = np.random.default_rng(67)
        x_p, x_q = _random_pair(rng, 15, 15, dim=3)
        kernel = GaussianKernel(0.8)
        exact = fit_kulsif(x_p, x_q, kernel, 1.0, 2)
        approx, _ = fit_cg(x_p, x_q, "kulsif", kernel, 1.0, 2, target_eps=1e-10)
        scores_exact = exact.scores(x_q)
        scores_cg = approx.scores(x_q)
        assert np.max(np.abs(scores_exact - scores_cg)) < 1e-6


class TestHeavyRegularization:
    """lam -> inf forces the fit toward the zero function, so ratios
    approach the value of the ratio map at zero."""

    EXPECTED = {"kulsif": 0.0, "lr": 1.0, "exp": 1.0, "sq": -0.5}

    @pytest.mark.parametrize("family", ["kulsif", "lr", "exp", "sq"])
    def test_ratio_at_zero_score(self, family):
        rng = np.random.default_rng(68)
        x_p, x_q = _random_pair(rng, 10, 10)
        lam = 1e8
        if family == "kulsif":
            model = fit_kulsif(x_p, x_q, UNIT_KERNEL, lam, 1)
        else:
            model, _ = fit_cg(x_p, x_q, family, UNIT_KERNEL, lam, 1)
        assert np.max(np.abs(model.coeffs)) < 1e-6
        probe = np.zeros(2)
        assert predict_ratio(model, probe) == pytest.approx(
            self.EXPECTED[family], abs=1e-4
        )


class TestIdenticalSamples:
    def test_lr_on_equal_point_sets(self):
        # With x_p identical to x_q the two label blocks cancel in the
        # gradient, so zero coefficients are already optimal: f = 0 and
        # the estimated ratio is exactly 1.
        rng = np.random.default_rng(69)
        x = rng.normal(0.0, 1.0, (12, 2))
        model, report = fit_cg(x, x, "lr", UNIT_KERNEL, 0.1, 2)
        assert np.max(np.abs(model.scores(x))) < 1e-8
        assert np.max(np.abs(model.ratios(x) - 1.0)) < 1e-8


class TestTrainRiskMonotone:
    def test_kulsif_risk_nonincreasing(self):
        rng = np.random.default_rng(70)
        for trial in range(10):
            x_p, x_q = _random_pair(rng, 30, 40, shift=0.5)
            kernel = GaussianKernel(median_bandwidth(np.vstack([x_p, x_q])))
            anchors, m, n, path = kulsif_coefficient_path(x_p, x_q, kernel, 0.05, 6)
            K = gram(kernel, anchors, anchors)
            risks = []
            for a in path:
                s = K @ a
                risks.append(empirical_risk("kulsif", s[:m], s[m:]))
            for early, late in zip(risks, risks[1:]):
                assert late <= early + 1e-10

    @pytest.mark.parametrize("family", ["lr", "exp", "sq"])
    def test_cg_risk_nonincreasing(self, family):
        rng = np.random.default_rng(71)
        x_p, x_q = _random_pair(rng, 25, 25, shift=0.4)
        kernel = GaussianKernel(median_bandwidth(np.vstack([x_p, x_q])))
        _, report = fit_cg(x_p, x_q, family, kernel, 0.1, 4)
        for early, late in zip(report.train_risks, report.train_risks[1:]):
            assert late <= early + 1e-10


class TestFitReport:
    def test_lengths_and_ranges(self):
        rng = np.random.default_rng(72)
        x_p, x_q = _random_pair(rng, 15, 15)
        _, report = fit_cg(x_p, x_q, "lr", UNIT_KERNEL, 0.5, 3)
        assert len(report.grad_norms) == 3
        assert len(report.cg_iterations) == 3
        assert len(report.objectives) == 3
        assert len(report.train_risks) == 3
        assert len(report.cap_hits) == 3
        assert all(g >= 0 for g in report.grad_norms)
        assert all(c >= 0 for c in report.cg_iterations)
        assert not any(report.cap_hits)
        assert report.wall_time >= 0

    def test_iteration_cap_recorded(self):
        rng = np.random.default_rng(73)
        x_p, x_q = _random_pair(rng, 20, 20)
        _, _, _, path, report = cg_coefficient_path(
            x_p, x_q, "lr", UNIT_KERNEL, 1e-4, 1, target_eps=1e-12, iteration_cap=1
        )
        assert report.cap_hits == [True]
        assert report.cg_iterations == [1]
        assert len(path) == 1

    def test_to_dict_types(self):
        report = FitReport(
            grad_norms=[np.float64(0.5)],
            cg_iterations=[np.int64(3)],
            objectives=[np.float64(1.0)],
            train_risks=[np.float64(0.2)],
            cap_hits=[np.bool_(False)],
        )
        doc = report.to_dict()
        assert json.dumps(doc)  # no numpy scalars may leak through
        assert doc["cg_iterations"] == [3]


class TestSerialization:
    def _model(self, family="kulsif"):
        rng = np.random.default_rng(74)
        x_p, x_q = _random_pair(rng, 5, 7)
        if family == "kulsif":
            return fit_kulsif(x_p, x_q, GaussianKernel(1.3), 0.7, 2)
        model, _ = fit_cg(x_p, x_q, family, GaussianKernel(1.3), 0.7, 2)
        return model

    @pytest.mark.parametrize("family", ["kulsif", "lr"])
    def test_round_trip_bit_identical(self, family, tmp_path):
        model = self._model(family)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.coeffs.tobytes() == model.coeffs.tobytes()
        assert loaded.anchors.tobytes() == model.anchors.tobytes()
        assert loaded.family.name == model.family.name
        assert loaded.lam == model.lam
        assert loaded.t == model.t
        assert (loaded.n_p, loaded.n_q) == (model.n_p, model.n_q)
        # Saving the loaded model must reproduce the file byte for byte.
        second = tmp_path / "model2.json"
        save_model(loaded, second)
        assert path.read_bytes() == second.read_bytes()

    def test_kulsif_split_blocks_present(self):
        model = self._model("kulsif")
        doc = model_to_dict(model)
        beta = np.frombuffer(
            __import__("base64").b64decode(doc["kulsif_beta"]["data"]), dtype="<f8"
        )
        assert np.array_equal(beta, model.kulsif_beta)

    def test_unknown_version_rejected(self):
        doc = model_to_dict(self._model())
        doc["version"] = 999
        with pytest.raises(InvalidInputError, match="version"):
            model_from_dict(doc)

    def test_predictions_survive_round_trip(self, tmp_path):
        model = self._model("lr")
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        probe = np.array([[0.1, -0.2], [1.0, 0.5]])
        assert np.array_equal(model.scores(probe), loaded.scores(probe))
        assert np.array_equal(model.ratios(probe), loaded.ratios(probe))


class TestPredictHelpers:
    def _zero_model(self, family):
        anchors = np.array([[0.0, 0.0]])
        return RatioModel(
            kernel=UNIT_KERNEL,
            family=get_family(family),
            anchors=anchors,
            coeffs=np.zeros(1),
            lam=1.0,
            t=1,
            n_p=1,
            n_q=0,
        )

    def test_zero_coefficients_score_zero(self):
        model = self._zero_model("kulsif")
        assert predict_score(model, [3.0, -1.0]) == 0.0

    @pytest.mark.parametrize(
        "family,expected", [("kulsif", 0.0), ("lr", 1.0), ("exp", 1.0), ("sq", -0.5)]
    )
    def test_ratio_map_applied_at_zero(self, family, expected):
        model = self._zero_model(family)
        assert predict_ratio(model, [0.0, 0.0]) == pytest.approx(expected)

    def test_single_anchor_scaling(self):
        model = RatioModel(
            kernel=GaussianKernel(2.0),
            family=get_family("kulsif"),
            anchors=np.array([[1.0]]),
            coeffs=np.array([3.0]),
            lam=1.0,
            t=1,
            n_p=1,
            n_q=0,
        )
        x = 2.5
        expected = 3.0 * np.exp(-((x - 1.0) ** 2) / (2 * 4.0))
        assert predict_score(model, [x]) == pytest.approx(expected, rel=1e-12)

    def test_split_properties(self):
        rng = np.random.default_rng(75)
        x_p, x_q = _random_pair(rng, 4, 6)
        model = fit_kulsif(x_p, x_q, UNIT_KERNEL, 1.0, 2)
        assert model.kulsif_beta.shape == (4,)
        assert model.kulsif_alpha.shape == (6,)
        assert np.array_equal(
            np.concatenate([model.kulsif_beta, model.kulsif_alpha]), model.coeffs
        )

    def test_batch_scores_match_pointwise(self):
        rng = np.random.default_rng(76)
        x_p, x_q = _random_pair(rng, 5, 5)
        model, _ = fit_cg(x_p, x_q, "exp", UNIT_KERNEL, 0.5, 1)
        probes = rng.normal(0, 1, (4, 2))
        batch = model.scores(probes)
        for i, row in enumerate(probes):
            assert batch[i] == pytest.approx(predict_score(model, row), rel=1e-12)


class TestValidation:
    def test_nonpositive_lambda(self):
        with pytest.raises(InvalidInputError, match="lambda"):
            kulsif_coefficient_path([[0.0]], [[1.0]], UNIT_KERNEL, 0.0, 1)
        with pytest.raises(InvalidInputError, match="lambda"):
            cg_coefficient_path([[0.0]], [[1.0]], "lr", UNIT_KERNEL, -1.0, 1)

    def test_bad_iteration_count(self):
        for t in (0, -2, 1.5):
            with pytest.raises(InvalidInputError):
                kulsif_coefficient_path([[0.0]], [[1.0]], UNIT_KERNEL, 1.0, t)

    def test_empty_side_rejected(self):
        with pytest.raises(InvalidInputError):
            fit_kulsif(np.empty((0, 1)), [[1.0]], UNIT_KERNEL, 1.0, 1)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            fit_kulsif([[0.0, 1.0]], [[1.0]], UNIT_KERNEL, 1.0, 1)

    def test_unknown_family(self):
        with pytest.raises(InvalidInputError):
            fit_cg([[0.0]], [[1.0]], "huber", UNIT_KERNEL, 1.0, 1)

    def test_bad_target_eps(self):
        with pytest.raises(InvalidInputError):
            cg_coefficient_path([[0.0]], [[1.0]], "lr", UNIT_KERNEL, 1.0, 1, target_eps=0.0)

    def test_line_search_failure_carries_context(self):
        err = LineSearchFailure(2, 17)
        assert err.subproblem == 2
        assert err.iteration == 17
        assert "sub-problem 2" in str(err)


@settings(max_examples=25, deadline=None)
@given(
    m=st.integers(min_value=1, max_value=4),
    n=st.integers(min_value=1, max_value=4),
    log_lam=st.floats(min_value=-2.0, max_value=2.0),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
def test_property_beta_block_and_stationarity(m, n, log_lam, seed):
    rng = np.random.default_rng(seed)
    x_p, x_q = _random_pair(rng, m, n)
    lam = float(10.0**log_lam)
    anchors, m_, n_, path = kulsif_coefficient_path(x_p, x_q, UNIT_KERNEL, lam, 2)
    N = m_ + n_
    K = gram(UNIT_KERNEL, anchors, anchors)
    fam = get_family("kulsif")
    prev = np.zeros(N)
    for k, a in enumerate(path, start=1):
        assert np.allclose(a[:m_], k / (lam * N), rtol=1e-13, atol=1e-13)
        s = K @ a
        w = np.concatenate([fam.d1(1, s[:m_]), fam.d1(-1, s[m_:])]) / N
        w += lam * (a - prev)
        assert np.linalg.norm(K @ w) <= 1e-9 * max(1.0, np.linalg.norm(a))
        prev = a
