import json
import math

import numpy as np
import pytest

from atpnet import formats
from atpnet.errors import ConfigError, DataError, FormatError, TrainingError
from atpnet.formats import Checkpoint, file_digest, load_measurements, save_measurements
from atpnet.model import ATPNet, TrainConfig
from atpnet.training import (
    EvalReport,
    data_rng,
    eval_threads,
    evaluate,
    load_training_images,
    phase_boundary,
    train,
)


# ---------------------------------------------------------------- config


def test_config_defaults_are_full_scale():
    cfg = TrainConfig()
    assert (cfg.crop, cfg.batch, cfg.lr, cfg.block_size, cfg.epochs) == (96, 32, 1e-4, 32, 200)
    assert cfg.warmup == 100
    assert cfg.lr_at(150) == pytest.approx(1e-5)
    assert cfg.sampler_config().out_channels == 256


def test_desk_preset_and_shipped_configs():
    from pathlib import Path

    cfg = TrainConfig.desk(mr=0.01, epochs=3)
    assert (cfg.mr, cfg.crop, cfg.batch, cfg.lr, cfg.epochs, cfg.seed) == (0.01, 96, 4, 1e-3, 3, 0)
    assert cfg.block_size == 32 and cfg.warmup == 1
    root = Path(__file__).resolve().parent.parent / "configs"
    assert TrainConfig.from_json(root / "desk.json") == TrainConfig.desk()
    assert TrainConfig.from_json(root / "full_scale.json") == TrainConfig()


@pytest.mark.parametrize(
    "kwargs",
    [{"mr": 0}, {"mr": 1.5}, {"sparsity_rate": 1.0}, {"crop": 100}, {"batch": 0}, {"epochs": -1},
     {"warmup_epochs": -2}, {"flip_prob": 2}, {"seed": -1}, {"dilation_rates": (2, 4)}, {"mr": 0.0005}],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_config_json_round_trip(tmp_path):
    cfg = TrainConfig(mr=0.1, dilation_rates=(1, 2, 5))
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    (tmp_path / "c.json").write_text(json.dumps({"mr": 0.04, "epochs": 3}))
    assert TrainConfig.from_json(tmp_path / "c.json").mr == 0.04
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_dict({"mr": 0.1, "momentum": 0.9})
    (tmp_path / "bad.json").write_text("{mr: ")
    with pytest.raises(ConfigError, match="invalid JSON"):
        TrainConfig.from_json(tmp_path / "bad.json")


# ---------------------------------------------------------------- formats


def test_checkpoint_round_trip_is_exact(tiny_cfg):
    model = ATPNet(tiny_cfg)
    rng = data_rng(3)
    rng.random(5)
    ckpt = Checkpoint.from_model(model, epoch=2, rng=rng, history=[{"epoch": 0, "train_mse": 0.1}])
    blob = ckpt.to_bytes()
    again = Checkpoint.from_bytes(blob)
    assert again.to_bytes() == blob
    assert again.config == tiny_cfg and again.epoch == 2
    assert again.rng().random() == rng.random()
    m2 = again.to_model()
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), m2.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()


def test_checkpoint_layout_header(tiny_cfg, tmp_path):
    ckpt = Checkpoint.from_model(ATPNet(tiny_cfg))
    digest = ckpt.save(tmp_path / "m.atpn")
    raw = (tmp_path / "m.atpn").read_bytes()
    assert raw[:4] == b"ATPN"
    assert digest == file_digest(tmp_path / "m.atpn") == ckpt.digest()
    version, hlen = np.frombuffer(raw[4:16], dtype="<u4", count=1)[0], int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16 : 16 + hlen])
    assert version == 1
    names = [s["name"] for s in header["sections"]]
    assert names == sorted(names) and "sampler.latent" in names and "sampler.latent#exp_avg" in names
    assert formats.sniff(tmp_path / "m.atpn") == b"ATPN"


def test_checkpoint_rejects_corruption(tiny_cfg):
    blob = Checkpoint.from_model(ATPNet(tiny_cfg)).to_bytes()
    with pytest.raises(FormatError, match="magic"):
        Checkpoint.from_bytes(b"ATPX" + blob[4:])
    with pytest.raises(FormatError, match="past the end"):
        Checkpoint.from_bytes(blob[:-4])
    with pytest.raises(FormatError, match="too short"):
        Checkpoint.from_bytes(blob[:6])
    with pytest.raises(FormatError, match="version"):
        Checkpoint.from_bytes(blob[:4] + (7).to_bytes(4, "little") + blob[8:])


def test_measurements_round_trip(tmp_path):
    y = np.random.default_rng(0).standard_normal((2, 3, 4, 5)).astype(np.float32)
    save_measurements(tmp_path / "y.atpm", y, 0.25, 32)
    back, mr, bs = load_measurements(tmp_path / "y.atpm")
    np.testing.assert_array_equal(back, y)
    assert (mr, bs) == (0.25, 32)
    raw = (tmp_path / "y.atpm").read_bytes()
    with pytest.raises(FormatError, match="float32"):
        formats.measurements_from_bytes(raw[:-1])
    with pytest.raises(FormatError, match="magic"):
        formats.measurements_from_bytes(b"ATPQ" + raw[4:])
    with pytest.raises(FormatError, match="rank 4"):
        formats.measurements_to_bytes(np.zeros((2, 2)), 0.1, 8)


# ---------------------------------------------------------------- training


def test_phase_boundary_gives_ternary_sampler(tiny_cfg, tiny_data):
    model = ATPNet(tiny_cfg)
    images = load_training_images(tiny_data[0], tiny_cfg.crop)
    info = phase_boundary(model, images, data_rng(0))
    w = model.sampler.effective_weight_array()
    alpha = float(model.sampler.alpha.data)
    assert model.sampler.mode == "ternary" and alpha == pytest.approx(info["alpha"])
    assert set(np.unique(w)).issubset({-np.float32(alpha), 0.0, np.float32(alpha)})
    assert abs(int((w == 0).sum()) - tiny_cfg.sparsity_rate * w.size) <= 1


def test_training_history_and_modes(tiny_cfg, tiny_data):
    records = []
    ckpt = train(tiny_cfg, *tiny_data, on_epoch=records.append)
    assert [r["mode"] for r in ckpt.history] == ["float", "float", "ternary", "ternary"]
    assert records == ckpt.history
    assert all(math.isfinite(r["train_mse"]) and math.isfinite(r["val_mse"]) for r in ckpt.history)
    assert ckpt.mode == "ternary" and ckpt.epoch == 4


def test_training_is_deterministic_and_resumable(tiny_cfg, tiny_data):
    a = train(tiny_cfg, *tiny_data)
    b = train(tiny_cfg, *tiny_data)
    assert a.to_bytes() == b.to_bytes()
    half = train(tiny_cfg, *tiny_data, until_epoch=3)
    resumed = train(tiny_cfg, *tiny_data, resume=Checkpoint.from_bytes(half.to_bytes()))
    assert resumed.to_bytes() == a.to_bytes()


def test_training_seed_changes_result(tiny_cfg, tiny_data):
    cfg = TrainConfig.from_dict({**tiny_cfg.to_dict(), "epochs": 1, "seed": 12})
    other = TrainConfig.from_dict({**tiny_cfg.to_dict(), "epochs": 1})
    assert train(cfg, *tiny_data).to_bytes() != train(other, *tiny_data).to_bytes()


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning", "ignore:invalid value:RuntimeWarning")
def test_training_nonfinite_loss_raises_with_checkpoint(tiny_cfg, tiny_data):
    cfg = TrainConfig.from_dict({**tiny_cfg.to_dict(), "lr": 1e30, "epochs": 3, "warmup_epochs": 3})
    with pytest.raises(TrainingError) as info:
        train(cfg, *tiny_data)
    assert info.value.checkpoint is not None


def test_training_data_errors(tiny_cfg, tmp_path):
    with pytest.raises(DataError):
        train(tiny_cfg, tmp_path / "nowhere")
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataError, match="no usable training images"):
        load_training_images(tmp_path / "empty", 16)


def test_evaluate_report(tiny_cfg, tiny_data, tmp_path, monkeypatch):
    ckpt = train(TrainConfig.from_dict({**tiny_cfg.to_dict(), "epochs": 2}), *tiny_data)
    report = evaluate(ckpt, tiny_data[1], mr=0.25, save_dir=tmp_path)
    assert [e["image"] for e in report.entries] == ["img00.png", "img01.png"]
    assert report.entries[0]["height"] == 16 and report.entries[0]["width"] == 24
    assert report.mean_psnr == pytest.approx(np.mean([e["psnr"] for e in report.entries]))
    assert (tmp_path / "img00_rec.png").exists()
    report.write_json(tmp_path / "r.json")
    report.write_csv(tmp_path / "r.csv")
    assert json.loads((tmp_path / "r.json").read_text())["mr"] == 0.25
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "image,height,width,psnr_db"
    with pytest.raises(ConfigError, match="trained at mr=0.25"):
        evaluate(ckpt, tiny_data[1], mr=0.1)
    monkeypatch.setenv("ATPNET_THREADS", "2")
    assert eval_threads() == 2
    threaded = evaluate(ckpt, tiny_data[1])
    assert [e["psnr"] for e in threaded.entries] == [e["psnr"] for e in report.entries]
    monkeypatch.setenv("ATPNET_THREADS", "many")
    with pytest.raises(ConfigError):
        eval_threads()


def test_eval_report_empty_mean():
    assert math.isnan(EvalReport([], 0.25, "x", 0.0).mean_psnr)
