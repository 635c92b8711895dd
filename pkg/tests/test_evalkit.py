import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scdm import evalkit
from scdm.evalkit import (ABLATION_HEADER, METRIC_NAMES, RATIOS, TOPOGRAPHY_WINDOWS, AblationRow, ConfusionCounts,
                          EvaluationError, classify, classify_ratios, curve_rms, evoked_curve, metrics,
                          read_ablation_table, reference_ablation_path, run_ablation, topography,
                          write_ablation_table)
from scdm.layout import reference_layouts
from scdm.signals import EpochSet
from scdm.synthetic import MINIATURE_SPEC, generate_coupled
from scdm.trainer import VARIANTS, TrainConfig, miniature_setup


def test_metrics_perfect_and_arithmetic():
    assert metrics(ConfusionCounts(tp=10, tn=10)) == {"ACC": 1.0, "SEN": 1.0, "SPE": 1.0, "PRE": 1.0}
    m = metrics(ConfusionCounts(tp=70, fp=20, tn=80, fn=30))
    assert m["ACC"] == 0.75 and m["SEN"] == 0.7 and m["SPE"] == 0.8
    assert m["PRE"] == pytest.approx(7 / 9, abs=1e-15)


def test_metrics_undefined():
    m = metrics(ConfusionCounts(tn=5, fn=5))
    assert m["PRE"] is None and m["SEN"] == 0.0
    assert metrics(ConfusionCounts())["ACC"] is None
    with pytest.raises(EvaluationError):
        ConfusionCounts(tp=-1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60), st.integers(0, 999))
def test_metrics_permutation_invariant(pairs, seed):
    y_true, y_pred = np.array(pairs).T
    perm = np.random.default_rng(seed).permutation(len(pairs))
    a = ConfusionCounts.from_predictions(y_true, y_pred)
    b = ConfusionCounts.from_predictions(y_true[perm], y_pred[perm])
    assert a == b and a.total == len(pairs)


def test_golden_table_row():
    rows = read_ablation_table(reference_ablation_path())
    assert len(rows) == 12
    row = next(r for r in rows if r.modality == "HbR" and r.modules == "SCG(fNIRS)+MTR")
    assert (row.acc, row.spe, row.pre, row.sen) == (76.72, 80.69, 79.03, 72.76)
    for modality in ("HbR", "HbO"):
        assert [r.modules for r in rows if r.modality == modality] == list(VARIANTS)


def test_table_round_trip(tmp_path):
    rows = [AblationRow("HbR", v, 70.0 + i, None, 66.5, 71.25, 1.5, "") for i, v in enumerate(VARIANTS)]
    write_ablation_table(rows, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == ",".join(ABLATION_HEADER)
    back = read_ablation_table(tmp_path / "t.csv")
    assert back == rows
    (tmp_path / "bad.csv").write_text("a,b\n")
    with pytest.raises(EvaluationError):
        read_ablation_table(tmp_path / "bad.csv")


@pytest.fixture(scope="module")
def cls_data():
    return generate_coupled(7, 80, MINIATURE_SPEC)


def test_classify_reproducible(cls_data):
    a = classify(cls_data.eeg, seed=3)
    assert a == classify(cls_data.eeg, seed=3)
    assert a.total == 5 * 2 * int(40 * 0.3)


def test_classify_shuffled_labels_chance():
    # 80 trials swings 0.39..0.55 across shuffles; 200 keeps the estimate tight
    eeg = generate_coupled(7, 200, MINIATURE_SPEC).eeg
    perm = np.random.default_rng(0).permutation(len(eeg))
    shuffled = EpochSet(eeg.epochs, eeg.labels[perm], eeg.sample_rate, eeg.channel_labels)
    acc = metrics(classify(shuffled, repetitions=10))["ACC"]
    assert abs(acc - 0.5) <= 0.1


def test_hybrid_not_worse_than_eeg(cls_data):
    eeg_only = metrics(classify(cls_data.eeg, seed=0))["ACC"]
    hybrid = metrics(classify(cls_data.eeg, cls_data.fnirs, seed=0))["ACC"]
    assert hybrid >= eeg_only
    assert eeg_only > 0.7


def test_all_ratios(cls_data):
    rows = classify_ratios(cls_data.eeg, repetitions=2)
    assert [r["ratio"] for r in rows] == ["2:8", "3:7", "4:6", "5:5", "6:4", "7:3", "8:2"]
    assert len(RATIOS) == 7 and all(set(METRIC_NAMES) <= set(r) for r in rows)


def test_class_absent_after_resampling():
    ep = EpochSet(np.random.default_rng(0).standard_normal((8, 2, 320)), [0] * 7 + [1], 160.0, ("a", "b"))
    with pytest.raises(EvaluationError):
        classify(ep, ratio=(5, 5), repetitions=1)
    with pytest.raises(EvaluationError):
        classify(ep, ratio=(1, 9))


def test_evoked_curves(rng):
    x = rng.standard_normal((1, 3, 10))
    single = EpochSet(x, [1], 1.0, ("a", "b", "c"))
    assert np.array_equal(evoked_curve(single, "RMI"), x[0])
    pair = EpochSet(np.concatenate([x, -x]), [0, 0], 1.0, ("a", "b", "c"))
    assert np.array_equal(evoked_curve(pair, 0), np.zeros((3, 10)))
    groups = evoked_curve(pair.with_epochs(np.concatenate([x, x])), "LMI", {"g": [0, 2]})
    assert np.allclose(groups["g"], x[0, [0, 2]].mean(axis=0))
    with pytest.raises(EvaluationError):
        evoked_curve(pair, "RMI")
    assert curve_rms(np.zeros(4), np.full(4, 2.0)) == 2.0


def fnirs_like(values, n_trials=4, rate=10.0, seconds=25.6):
    n = int(round(rate * seconds))
    lay = reference_layouts()["fNIRS"]
    data = np.broadcast_to(np.asarray(values, dtype=float)[None, :, None], (n_trials, len(lay), n)).copy()
    return EpochSet(data, [0, 1] * (n_trials // 2), rate, lay.names), lay


def test_topography_constant_and_windows():
    ep, lay = fnirs_like(np.full(36, 0.7))
    frames = topography(ep, lay)
    assert [f.window for f in frames] == list(TOPOGRAPHY_WINDOWS)
    assert frames[0].window == (3.0, 5.0) and frames[-1].window == (15.0, 17.0)
    for f in frames:
        inside = f.raster[~np.isnan(f.raster)]
        assert inside.size > len(f.channels) and np.allclose(inside, 0.7)


def test_topography_exact_at_vertices_and_bounded(rng):
    ep, lay = fnirs_like(rng.uniform(-1, 1, 36))
    for f in topography(ep, lay, class_label="LMI"):
        cells = lay.cells[list(f.channels)]
        assert np.array_equal(f.raster[cells[:, 0], cells[:, 1]], f.values)
        inside = f.raster[~np.isnan(f.raster)]
        assert inside.min() >= f.values.min() - 1e-12 and inside.max() <= f.values.max() + 1e-12


def test_topography_errors():
    ep, lay = fnirs_like(np.zeros(36))
    with pytest.raises(EvaluationError, match="outside"):
        topography(ep, lay, windows=[(20.0, 30.0)])
    with pytest.raises(EvaluationError):
        topography(EpochSet(ep.epochs[:, :5], ep.labels, 10.0, lay.names[:5]), lay)


def test_topography_on_generated_data(cls_data):
    lay = reference_layouts()["fNIRS"]
    for cls in ("LMI", "RMI"):
        assert len(topography(cls_data.fnirs, lay, class_label=cls)) == 7


def test_run_ablation_shape_and_failures(cls_data, monkeypatch):
    cfg, sched = miniature_setup(width=8)
    cfg = TrainConfig(unet=cfg.unet, batch_size=8, epochs=1, learning_rate=3e-3)
    data = generate_coupled(3, 24, MINIATURE_SPEC)
    from scdm import trainer
    real_train = trainer.train

    def flaky(config, *a, **kw):
        if config.variant == "ATTN+MTR":
            raise RuntimeError("boom")
        return real_train(config, *a, **kw)

    monkeypatch.setattr(trainer, "train", flaky)
    rows, records = run_ablation(data.eeg, data.fnirs, cfg, sched, seeds=(0,), repetitions=1)
    assert [r.modules for r in rows] == list(VARIANTS)
    assert all(r.modality == "HbR" for r in rows)
    failed = rows[1]
    assert failed.acc is None and "boom" in failed.note
    for r in rows[:1] + rows[2:]:
        assert len(r.metric_values()) == 4 and r.acc is not None and r.note == ""
    assert len(records) == 6
    assert evalkit.METRIC_NAMES == ("ACC", "SPE", "PRE", "SEN")
