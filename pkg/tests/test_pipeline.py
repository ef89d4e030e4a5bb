import numpy as np
import numpy.testing as npt
import pytest

from otfusion.calibration import PredictionSet
from otfusion.errors import ParameterError
from otfusion.model import (ModelConfig, ablation_variant, assemble_model,
                            expected_parameter_count)
from otfusion.significance import aso
from otfusion.synthetic import SyntheticTaskConfig, generate_task
from otfusion.training import (EarlyStopping, TrainConfig, classification_metrics,
                               evaluate, lr_at_epoch, run_experiment, train)


def tiny_task(**kw):
    base = dict(n=6, t=6, d=8, class_separation=3.0, cross_modal_correlation=0.5,
                train_size=40, val_size=16, test_size=16, seed=0)
    base.update(kw)
    return SyntheticTaskConfig(**base)


def tiny_model(**kw):
    base = dict(d=8, seq_len=6, strategy="deep", layers=2, d_q=6, d_k=6, d_g=4,
                k=4, d_z=8, otk_iters=10)
    base.update(kw)
    return ModelConfig(**base)


def tiny_train(**kw):
    base = dict(max_epochs=6, runs=1, lr=0.05)
    base.update(kw)
    return TrainConfig(**base)


class TestGenerateTask:
    def test_deterministic_given_seed(self):
        a = generate_task(tiny_task())
        b = generate_task(tiny_task())
        npt.assert_array_equal(a.train[0].x, b.train[0].x)
        npt.assert_array_equal(a.test[-1].y, b.test[-1].y)
        assert [s.label for s in a.train] == [s.label for s in b.train]

    def test_different_seed_differs(self):
        a = generate_task(tiny_task())
        b = generate_task(tiny_task(seed=1))
        assert not np.array_equal(a.train[0].x, b.train[0].x)

    def test_balanced_splits(self):
        data = generate_task(tiny_task())
        for split in (data.train, data.val, data.test):
            labels = [s.label for s in split]
            assert abs(labels.count(0) - labels.count(1)) <= 1

    def test_shapes(self):
        data = generate_task(tiny_task(n=5, t=9, d=4))
        assert data.train[0].x.shape == (5, 4)
        assert data.train[0].y.shape == (9, 4)

    def test_separable_task_passes_linear_probe(self):
        # oracle: least-squares probe on mean-pooled concatenated features
        data = generate_task(tiny_task(train_size=120, test_size=60))

        def pool(samples):
            return np.array([np.concatenate([s.x.mean(0), s.y.mean(0)]) for s in samples])

        x_train, y_train = pool(data.train), np.array([s.label for s in data.train])
        x_test, y_test = pool(data.test), np.array([s.label for s in data.test])
        design = np.hstack([x_train, np.ones((len(x_train), 1))])
        w, *_ = np.linalg.lstsq(design, 2.0 * y_train - 1.0, rcond=None)
        pred = (np.hstack([x_test, np.ones((len(x_test), 1))]) @ w) > 0
        assert (pred == y_test).mean() >= 0.95

    def test_validation(self):
        with pytest.raises(ParameterError):
            tiny_task(cross_modal_correlation=1.5)
        with pytest.raises(ParameterError):
            tiny_task(train_size=0)


class TestAssembleModel:
    @pytest.mark.parametrize("fusion", ["co_attention", "attn_fusion", "concat"])
    @pytest.mark.parametrize("strategy", ["global", "deep", "deep_global"])
    def test_parameter_count_matches_shape_sum(self, fusion, strategy):
        cfg = tiny_model(fusion=fusion, strategy=strategy, layers=None)
        model = assemble_model(cfg, seed=0)
        assert model.parameter_count() == expected_parameter_count(cfg)

    def test_forward_emits_two_logits(self):
        rng = np.random.default_rng(0)
        model = assemble_model(tiny_model(), seed=1)
        logits = model.forward(rng.standard_normal((6, 8)), rng.standard_normal((6, 8)), False)
        assert logits.shape == (1, 2)
        assert np.all(np.isfinite(logits.value))

    def test_eval_mode_deterministic(self):
        rng = np.random.default_rng(1)
        model = assemble_model(tiny_model(), seed=2)
        x, y = rng.standard_normal((6, 8)), rng.standard_normal((6, 8))
        npt.assert_array_equal(model.forward(x, y, False).value, model.forward(x, y, False).value)

    def test_same_seed_same_model(self):
        a = assemble_model(tiny_model(), seed=3)
        b = assemble_model(tiny_model(), seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            npt.assert_array_equal(pa.value, pb.value)

    def test_image_branch_modes(self):
        rng = np.random.default_rng(2)
        y_enc = rng.standard_normal((9, 8))
        repeat = assemble_model(tiny_model(otk_mode="repeat"), 0)._image_sequence(y_enc)
        assert repeat.shape == (6, 8)
        npt.assert_allclose(repeat.value, np.tile(y_enc.mean(0), (6, 1)), atol=1e-15)
        identity_model = assemble_model(tiny_model(otk_mode="identity"), 0)
        with pytest.raises(ParameterError):
            identity_model._image_sequence(y_enc)
        npt.assert_array_equal(
            identity_model._image_sequence(y_enc[:6]).value, y_enc[:6]
        )

    def test_forward_rejects_wrong_shapes(self):
        from otfusion.errors import DimensionError

        model = assemble_model(tiny_model(), seed=0)
        rng = np.random.default_rng(6)
        with pytest.raises(DimensionError):
            model.forward(rng.standard_normal((5, 8)), rng.standard_normal((6, 8)), False)
        with pytest.raises(DimensionError):
            model.forward(rng.standard_normal((6, 8)), rng.standard_normal((6, 7)), False)

    def test_otk_reference_init_from_data(self):
        model = assemble_model(tiny_model(), seed=4)
        rows = np.random.default_rng(3).standard_normal((20, 8))
        before = model.references.value.copy()
        model.init_references(rows, np.random.default_rng(4))
        assert not np.array_equal(before, model.references.value)
        assert all(any(np.array_equal(ref, row) for row in rows)
                   for ref in model.references.value)


class TestTrainMechanics:
    def test_lr_schedule(self):
        tc = TrainConfig(lr=0.1, step_size=4, gamma=0.1)
        assert [lr_at_epoch(tc, e) for e in range(9)] == pytest.approx(
            [0.1] * 4 + [0.01] * 4 + [0.001]
        )

    def test_early_stopping_counts_from_last_strict_minimum(self):
        stopper = EarlyStopping(patience=8)
        assert stopper.update(1.0)
        stopped_at = None
        for i, loss in enumerate(1.0 + 0.1 * np.arange(1, 20)):
            stopper.update(loss)
            if stopper.should_stop:
                stopped_at = i
                break
        assert stopped_at == 7  # the 8th consecutive non-improving epoch

    def test_early_stopping_resets_on_improvement(self):
        stopper = EarlyStopping(patience=3)
        for loss in (5.0, 6.0, 4.0, 4.5, 4.4, 4.41):
            stopper.update(loss)
        assert stopper.should_stop

    def test_training_improves_loss_and_restores_best(self):
        data = generate_task(tiny_task())
        model = assemble_model(tiny_model(), seed=0)
        record = train(model, data, tiny_train(), seed=0)
        assert record.epochs >= 1
        assert np.isfinite(record.best_val_loss)
        _, result = evaluate(model, data.test)
        assert result["metrics"]["accuracy"] >= 0.8


class TestClassificationMetrics:
    def test_all_correct_gives_ones(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.8, 0.2], [0.1, 0.9]])
        labels = np.array([0, 1, 0, 1])
        result = classification_metrics(PredictionSet(probs, labels))
        for name in ("precision", "recall", "f1", "accuracy", "specificity"):
            assert result["metrics"][name] == 1.0

    def test_all_predicted_positive_on_balanced_split(self):
        probs = np.array([[0.2, 0.8]] * 4)
        labels = np.array([0, 1, 0, 1])
        result = classification_metrics(PredictionSet(probs, labels))
        m = result["metrics"]
        assert m["recall"] == 1.0
        assert m["specificity"] == 0.0
        assert m["precision"] == 0.5
        assert "specificity" not in result["zero_division_flags"]

    def test_zero_denominators_flagged(self):
        probs = np.array([[0.9, 0.1]] * 3)
        labels = np.array([0, 0, 0])
        result = classification_metrics(PredictionSet(probs, labels))
        assert result["metrics"]["recall"] == 0.0
        assert "recall" in result["zero_division_flags"]
        assert "precision" in result["zero_division_flags"]

    def test_random_confusion_against_hand_oracle(self):
        rng = np.random.default_rng(5)
        n = 40
        labels = rng.integers(0, 2, n)
        conf = rng.uniform(0.5, 1.0, n)
        predicted = rng.integers(0, 2, n)
        probs = np.array([[1 - c, c] if p == 1 else [c, 1 - c]
                          for c, p in zip(conf, predicted)])
        result = classification_metrics(PredictionSet(probs, labels))
        tp = np.sum((predicted == 1) & (labels == 1))
        fp = np.sum((predicted == 1) & (labels == 0))
        fn = np.sum((predicted == 0) & (labels == 1))
        tn = np.sum((predicted == 0) & (labels == 0))
        m = result["metrics"]
        assert m["precision"] == pytest.approx(tp / (tp + fp))
        assert m["recall"] == pytest.approx(tp / (tp + fn))
        assert m["accuracy"] == pytest.approx((tp + tn) / n)
        if m["precision"] + m["recall"] > 0:
            expected_f1 = 2 * m["precision"] * m["recall"] / (m["precision"] + m["recall"])
            assert m["f1"] == pytest.approx(expected_f1)


class TestRunExperiment:
    def test_single_run_has_zero_std(self):
        report = run_experiment(tiny_model(), tiny_train(), tiny_task(), "single")
        for agg in report.aggregate.values():
            assert agg["std"] == 0.0

    def test_aggregate_mean_is_arithmetic_mean(self):
        tc = tiny_train(runs=2, max_epochs=3)
        report = run_experiment(tiny_model(), tc, tiny_task(), "pair")
        accs = report.metric_values("accuracy")
        assert report.aggregate["accuracy"]["mean"] == pytest.approx(np.mean(accs))

    def test_bit_identical_reports_for_same_seeds(self):
        tc = tiny_train(runs=2, max_epochs=3)
        first = run_experiment(tiny_model(), tc, tiny_task(), "repro")
        second = run_experiment(tiny_model(), tc, tiny_task(), "repro")
        assert first.to_json() == second.to_json()

    def test_aso_comparison_between_configs(self):
        tc = tiny_train(runs=3, max_epochs=3)
        strong = run_experiment(tiny_model(), tc, tiny_task(), "strong")
        weak_task = tiny_task(class_separation=0.0, cross_modal_correlation=0.0)
        weak = run_experiment(tiny_model(), tc, weak_task, "weak")
        with pytest.warns(UserWarning):  # 3 runs is below the 5-sample guidance
            result = aso(strong.metric_values("f1"), weak.metric_values("f1"),
                         bootstrap_iters=200, seed=0)
        assert 0.0 <= result.eps_min <= 1.0


class TestAblation:
    def test_variant_configs(self):
        base = tiny_model()
        assert ablation_variant(base, "no_context")[0][1].context_gate_override == 0.0
        assert ablation_variant(base, "no_gate")[0][1].image_mask_ones
        no_ot = ablation_variant(base, "no_ot")[0][1]
        assert not no_ot.ot_enabled and no_ot.otk_mode == "identity"
        assert ablation_variant(base, "repeat_instead_of_otk")[0][1].otk_mode == "repeat"
        assert ablation_variant(base, "no_fusion")[0][1].fusion == "concat"
        sweep = ablation_variant(base, "layer_sweep")
        assert [cfg.layers for _, cfg in sweep] == [1, 2, 3, 4, 5]

    def test_unknown_axis(self):
        with pytest.raises(ParameterError):
            ablation_variant(tiny_model(), "bogus")

    def test_no_fusion_variant_trains(self):
        report = run_experiment(tiny_model(fusion="concat"), tiny_train(max_epochs=3),
                                tiny_task(), "concat")
        assert not report.runs[0].aborted
        assert set(report.aggregate) == {"precision", "recall", "f1", "accuracy",
                                         "specificity", "ece", "ace"}
