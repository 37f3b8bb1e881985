import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from handprior.data import generate_synthetic
from handprior.evaluation import (
    EvalReport,
    _stratum_stats,
    evaluate,
    joint_error_mm,
    nearest_hand_retrieval,
    procrustes_align,
)
from handprior.kinematics import axis_angle_to_matrix, default_tree


def random_points(j=42, seed=0):
    return np.random.default_rng(seed).normal(size=(j, 3))


def orthogonal_perturbation_pair(seed, j=42, target_residual=0.01):
    """(x, y) whose optimal similarity alignment is the identity, with the
    post-alignment mean joint residual set exactly.

    Construction: both sets centered and y = x + c*w with x^T w = 0, so the
    cross-covariance stays x^T x (symmetric PSD => optimal rotation I), the
    optimal scale is tr(x^T x)/||x||^2 = 1, and translation is 0. The residual
    is then exactly c*w row-norms.
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(j, 3))
    x -= x.mean(axis=0)
    w = rng.normal(size=(j, 3))
    w -= w.mean(axis=0)
    w -= x @ np.linalg.solve(x.T @ x, x.T @ w)
    c = target_residual / np.linalg.norm(w, axis=1).mean()
    return x, x + c * w


class TestProcrustes:
    def test_identity_on_equal_inputs(self):
        x = random_points(seed=1)
        s, r, t, aligned = procrustes_align(x, x)
        assert s == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(r, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(t, 0.0, atol=1e-12)
        assert np.linalg.norm(aligned - x) < 1e-12

    def test_construct_and_recover(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            x = rng.normal(size=(42, 3))
            r0 = axis_angle_to_matrix(rng.normal(size=3))
            t0 = rng.normal(size=3)
            y = 2.0 * x @ r0 + t0
            s, r, t, aligned = procrustes_align(x, y)
            assert s == pytest.approx(2.0, abs=1e-6)
            assert np.linalg.norm(aligned - y) < 1e-9

    def test_reflection_not_recoverable(self):
        # chiral (non-coplanar) set vs its mirror image: a proper rotation
        # cannot reproduce a reflection, so the residual stays positive
        x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        y = x * np.array([1.0, 1.0, -1.0])
        _, r, _, aligned = procrustes_align(x, y)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)
        assert np.linalg.norm(aligned - y) > 1e-3

    def test_matches_numerical_optimizer(self):
        # independent oracle: direct minimization over (log s, rotvec, t)
        x = random_points(j=10, seed=3)
        y = random_points(j=10, seed=4)
        s, r, t, aligned = procrustes_align(x, y)
        ours = np.sum((aligned - y) ** 2)

        def cost(p):
            rot = Rotation.from_rotvec(p[1:4]).as_matrix()
            return np.sum((np.exp(p[0]) * x @ rot + p[4:7] - y) ** 2)

        best = np.inf
        rng = np.random.default_rng(5)
        for _ in range(8):
            res = minimize(cost, np.concatenate([[0.0], rng.normal(size=6)]), method="BFGS")
            best = min(best, res.fun)
        assert ours <= best + 1e-6

    def test_rejects_collinear(self):
        x = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="collinear"):
            procrustes_align(x, random_points(j=5, seed=6))

    def test_rejects_too_few_points(self):
        with pytest.raises(ValueError, match="3 points"):
            procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_planar_sets_allowed(self):
        x = random_points(j=8, seed=7)
        x[:, 2] = 0.0
        y = random_points(j=8, seed=8)
        procrustes_align(x, y)  # must not raise


class TestJointErrorMm:
    def test_identity_is_zero(self):
        pos = random_points(seed=9)[None]
        err = joint_error_mm(pos, pos, gt_shoulder_dist=0.3)
        assert err.shape == (1,)
        assert abs(err[0]) < 1e-12

    def test_scaling_fixture(self):
        # 0.01-unit aligned residual at 0.6-unit shoulders: 0.01 * (0.30/0.6) * 1000 = 5 mm
        x, y = orthogonal_perturbation_pair(seed=10, target_residual=0.01)
        err = joint_error_mm(x[None], y[None], gt_shoulder_dist=0.6)
        assert err[0] == pytest.approx(5.0, abs=1e-9)

    def test_invariant_to_rigid_transform_of_prediction(self):
        gt = random_points(seed=11)[None]
        pred = random_points(seed=12)[None]
        base = joint_error_mm(pred, gt, gt_shoulder_dist=0.3)
        r = axis_angle_to_matrix(np.array([0.2, -0.4, 1.1]))
        moved = 1.7 * pred @ r + np.array([5.0, -2.0, 0.5])
        np.testing.assert_allclose(
            joint_error_mm(moved, gt, gt_shoulder_dist=0.3), base, atol=1e-9
        )

    def test_rejects_bad_shoulder(self):
        pos = random_points(seed=13)[None]
        with pytest.raises(ValueError, match="shoulder"):
            joint_error_mm(pos, pos, gt_shoulder_dist=0.0)

    def test_rejects_wrong_joint_count(self):
        pos = random_points(j=10, seed=14)[None]
        with pytest.raises(ValueError, match="42"):
            joint_error_mm(pos, pos, gt_shoulder_dist=0.3)


class TestStratumStats:
    def test_constant_error(self):
        mean, std, frames = _stratum_stats([np.full(10, 5.0), np.full(4, 5.0)])
        assert mean == pytest.approx(5.0) and std == pytest.approx(0.0) and frames == 14

    def test_frame_weighted_mean(self):
        mean, std, frames = _stratum_stats([np.full(10, 2.0), np.full(30, 4.0)])
        assert mean == pytest.approx((10 * 2 + 30 * 4) / 40)
        assert std == pytest.approx(1.0)  # population std of sequence means {2, 4}
        assert frames == 40

    def test_empty(self):
        mean, std, frames = _stratum_stats([np.zeros(0)])
        assert mean is None and std is None and frames == 0


class TestEvaluate:
    @pytest.fixture
    def scenario(self):
        tree = default_tree()
        gt = generate_synthetic(2, 16, seed=15, with_clarity=True)
        return tree, gt

    def test_perfect_prediction_scores_zero(self, scenario):
        tree, gt = scenario
        methods = {"perfect": {s.id: s.hands.copy() for s in gt}}
        report = evaluate(methods, gt, tree)
        assert len(report.rows) == 3
        for stratum in ("unclear", "clear", "all"):
            row = report.row("perfect", stratum)
            assert row.mean_mm == pytest.approx(0.0, abs=1e-9)
            assert row.std_mm == pytest.approx(0.0, abs=1e-9)

    def test_all_is_frame_weighted_combination(self, scenario):
        tree, gt = scenario
        rng = np.random.default_rng(16)
        methods = {"noisy": {s.id: s.hands + 0.05 * rng.normal(size=s.hands.shape) for s in gt}}
        report = evaluate(methods, gt, tree)
        unclear = report.row("noisy", "unclear")
        clear = report.row("noisy", "clear")
        allrow = report.row("noisy", "all")
        assert allrow.frames == unclear.frames + clear.frames
        combined = (
            unclear.mean_mm * unclear.frames + clear.mean_mm * clear.frames
        ) / allrow.frames
        assert allrow.mean_mm == pytest.approx(combined, abs=1e-9)

    def test_missing_clarity_reports_all_only(self):
        tree = default_tree()
        gt = generate_synthetic(2, 8, seed=17)  # no clarity labels
        methods = {"m": {s.id: s.hands.copy() for s in gt}}
        with pytest.warns(UserWarning, match="clarity"):
            report = evaluate(methods, gt, tree)
        assert [r.stratum for r in report.rows] == ["all"]

    def test_empty_stratum_marked_not_nan(self):
        tree = default_tree()
        gt = generate_synthetic(1, 8, seed=18)
        gt[0].clarity = np.ones(8, dtype=np.int64)  # every frame clear
        methods = {"m": {gt[0].id: gt[0].hands.copy()}}
        report = evaluate(methods, gt, tree)
        row = report.row("m", "unclear")
        assert row.frames == 0 and row.mean_mm is None and row.std_mm is None
        assert "nan" not in report.format()

    def test_frame_mismatch_names_sequence(self, scenario):
        tree, gt = scenario
        methods = {"m": {s.id: s.hands[:-1] for s in gt}}
        with pytest.raises(ValueError, match=gt[0].id):
            evaluate(methods, gt, tree)

    def test_report_format_round_numbers(self):
        report = EvalReport()
        from handprior.evaluation import EvalRow
        report.rows.append(EvalRow("m", "all", 5.0, 0.0, 14))
        lines = report.format().strip().splitlines()
        assert lines[1].split() == ["m", "all", "5.000000", "0.000000", "14"]


class TestRetrieval:
    def test_query_in_set_ranks_first(self):
        rng = np.random.default_rng(19)
        hands = rng.normal(size=(20, 126))
        bodies = rng.normal(size=(20, 18))
        h, b, d = nearest_hand_retrieval(hands[7], hands, bodies, k=5)
        assert d[0] == 0.0
        np.testing.assert_array_equal(h[0], hands[7])
        np.testing.assert_array_equal(b[0], bodies[7])

    def test_k_equals_n_returns_all_sorted(self):
        rng = np.random.default_rng(20)
        hands = rng.normal(size=(6, 126))
        bodies = rng.normal(size=(6, 18))
        _, _, d = nearest_hand_retrieval(rng.normal(size=126), hands, bodies, k=6)
        assert len(d) == 6
        assert np.all(np.diff(d) >= 0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(21)
        hands = rng.normal(size=(5, 126))
        bodies = rng.normal(size=(5, 18))
        query = rng.normal(size=126)
        h, b, d = nearest_hand_retrieval(query, hands, bodies, k=5)
        expected = sorted(range(5), key=lambda i: np.linalg.norm(hands[i] - query))
        np.testing.assert_array_equal(h, hands[expected])
        np.testing.assert_array_equal(b, bodies[expected])

    def test_k_beyond_n_warns_and_returns_all(self):
        rng = np.random.default_rng(22)
        hands = rng.normal(size=(3, 126))
        bodies = rng.normal(size=(3, 18))
        with pytest.warns(UserWarning, match="only 3"):
            h, _, _ = nearest_hand_retrieval(rng.normal(size=126), hands, bodies, k=10)
        assert h.shape == (3, 126)
