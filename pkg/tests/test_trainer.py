import math

import numpy as np
import pytest
import torch

from scdm.nn.unet import UNetConfig
from scdm.trainer import (VARIANTS, Checkpoint, TrainConfig, TrainingDiverged, build_variant, load_checkpoint,
                          miniature_setup, noise_loss, normalize_variant, save_checkpoint, synthesize, train,
                          variant_config)


def test_loss_examples(rng):
    e = torch.as_tensor(rng.standard_normal((2, 3, 4)))
    assert float(noise_loss(e, e)) == 0.0
    assert float(noise_loss(torch.zeros(2, 3), torch.full((2, 3), 1.5))) == pytest.approx(2.25, abs=0)
    with pytest.raises(ValueError):
        noise_loss(torch.zeros(2, 3), torch.zeros(3, 2))


def test_loss_matches_compensated_sum(rng):
    a, b = rng.standard_normal((8, 36, 32)), rng.standard_normal((8, 36, 32))
    oracle = math.fsum(((b - a) ** 2).ravel().tolist()) / a.size
    got = float(noise_loss(torch.as_tensor(a), torch.as_tensor(b)))
    assert abs(got - oracle) <= 1e-10


def test_variant_wiring():
    assert VARIANTS[0] == "ATTN+COV" and VARIANTS[-1] == "SCG(fNIRS)+MTR"
    scdm = variant_config("SCG(EEG)+MTR")
    assert (scdm.channel_stage, scdm.scg_mode, scdm.length_stage) == ("scg", "map", "mtr")
    ddpm = variant_config("ATTN+COV")
    assert (ddpm.channel_stage, ddpm.length_stage) == ("attn", "cov")
    assert variant_config("scg(fnirs) + cov").scg_mode == "spatial_fnirs"
    assert normalize_variant(" SCG(EEG) + MTR ") == "SCG(EEG)+MTR"
    with pytest.raises(ValueError):
        normalize_variant("SCG+MTR")


def small_config(epochs=2, **kw):
    cfg, sched = miniature_setup(width=8)
    return TrainConfig(unet=cfg.unet, batch_size=8, epochs=epochs, learning_rate=3e-3, seed=kw.pop("seed", 0),
                       **kw), sched


def test_training_reproducible(mini):
    cfg, sched = small_config()
    eeg, fnirs = mini.eeg.subset(range(16)), mini.fnirs.subset(range(16))
    a, _ = train(cfg, eeg, fnirs, sched)
    b, _ = train(cfg, eeg, fnirs, sched)
    assert a.epoch_losses == b.epoch_losses
    assert len(a.epoch_losses) == 2 and all(math.isfinite(v) for v in a.epoch_losses)


def test_zero_epochs_is_initialization(mini):
    cfg, sched = small_config(epochs=0, seed=3)
    _, ckpt = train(cfg, mini.eeg.subset(range(8)), mini.fnirs.subset(range(8)), sched)
    torch.manual_seed(3)
    fresh = build_variant(ckpt.config.variant, ckpt.config.unet)
    for k, v in fresh.state_dict().items():
        assert np.array_equal(ckpt.state[k], v.double().numpy())


def test_checkpoint_byte_stable(mini, tmp_path):
    cfg, sched = small_config(epochs=1, checkpoint_every=1)
    report, ckpt = train(cfg, mini.eeg.subset(range(8)), mini.fnirs.subset(range(8)), sched, out_dir=tmp_path)
    assert report.checkpoints == [str(tmp_path / "checkpoint_epoch0001.scdm")]
    first = (tmp_path / "checkpoint.scdm").read_bytes()
    loaded = load_checkpoint(tmp_path / "checkpoint.scdm")
    save_checkpoint(loaded, tmp_path / "again.scdm")
    assert (tmp_path / "again.scdm").read_bytes() == first
    assert isinstance(loaded, Checkpoint) and loaded.config == ckpt.config
    assert (tmp_path / "train_report.json").is_file() and (tmp_path / "loss_curve.csv").is_file()


def test_checkpoint_rebuilds_same_net(mini):
    cfg, sched = small_config(epochs=1)
    _, ckpt = train(cfg, mini.eeg.subset(range(8)), mini.fnirs.subset(range(8)), sched)
    a = synthesize(ckpt, mini.eeg.subset(range(3)), seed=5)
    b = synthesize(ckpt, mini.eeg.subset(range(3)), seed=5)
    assert a.epochs.shape == (3, 36, 32) and np.array_equal(a.epochs, b.epochs)
    assert a.sample_rate == mini.fnirs.sample_rate and a.channel_labels == mini.fnirs.channel_labels


def test_miniature_c4_loss_halves(mini):
    cfg, sched = miniature_setup(width=4)
    assert cfg.unet.width == 4 and sched.T == 50
    report, _ = train(cfg, mini.eeg, mini.fnirs, sched)
    assert report.config["unet"]["length"] == 32 and len(mini.eeg) == 40 and cfg.epochs == 30
    assert report.epoch_losses[-1] < 0.5 * report.epoch_losses[0]


def test_divergence_aborts(mini):
    cfg, sched = small_config(epochs=3)
    cfg.learning_rate = 1e30
    with pytest.raises(TrainingDiverged):
        train(cfg, mini.eeg.subset(range(8)), mini.fnirs.subset(range(8)), sched)


def test_train_input_errors(mini):
    cfg, sched = small_config()
    with pytest.raises(ValueError, match="mismatch"):
        train(cfg, mini.eeg.subset(range(8)), mini.fnirs.subset(range(6)), sched)
    lmi, rmi = np.flatnonzero(mini.eeg.labels == 0)[0], np.flatnonzero(mini.eeg.labels == 1)[0]
    with pytest.raises(ValueError, match="aligned"):
        train(cfg, mini.eeg.subset([lmi, rmi]), mini.fnirs.subset([rmi, lmi]), sched)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_all_variants_train(mini):
    base = UNetConfig(width=8, depth=2)
    _, sched = small_config(epochs=1)
    for v in VARIANTS:
        c = TrainConfig(unet=base, variant=v, batch_size=8, epochs=1, learning_rate=1e-3)
        report, _ = train(c, mini.eeg.subset(range(8)), mini.fnirs.subset(range(8)), sched)
        assert math.isfinite(report.epoch_losses[0])
