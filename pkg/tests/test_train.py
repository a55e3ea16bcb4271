"""Trainer behavior: freeze contract, loss accounting, determinism, resume
equality, divergence guard, and checkpoint round-trips."""

import json

import numpy as np
import pytest
import torch

from crgan import corpus, train
from crgan.quality import PluginError
from crgan.train import Batch, CheckpointError, TrainConfig, Trainer, TrainingDiverged


@pytest.fixture(scope="module")
def records():
    cfg = corpus.CorpusConfig(n_train=6, n_test=0, duration_s=1.2, seed=31)
    return corpus.build_manifest(cfg)


def make_trainer(records, variant="W-CRGAN", **overrides):
    defaults = dict(
        variant=variant, epochs=2, batch_size=4, seed=5, validation_fraction=0.0
    )
    defaults.update(overrides)
    return Trainer(records, TrainConfig(**defaults))


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(variant="XYZ")
    with pytest.raises(ValueError):
        TrainConfig(variant="M-CRGAN", batch_size=8)  # metric family is batch-1
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(chunk_policy="overlap")
    with pytest.raises(ValueError):
        TrainConfig(scale="huge")
    with pytest.raises(ValueError):
        TrainConfig(validation_fraction=0.9)
    cfg = TrainConfig(variant="R-CRGAN")
    assert cfg.loss_config().family == "relativistic"
    assert cfg.loss_config().use_l1
    assert TrainConfig(variant="CRN-MSE").loss_config() is None
    assert not TrainConfig(variant="M-CRGAN", batch_size=1).loss_config().use_mse
    assert TrainConfig(variant="M-CRGAN-MSE", batch_size=1).loss_config().use_mse


def test_optimizer_selection(records):
    assert isinstance(make_trainer(records).g_optimizer, torch.optim.Adam)
    assert isinstance(make_trainer(records, variant="LSTM").g_optimizer, torch.optim.RMSprop)
    assert isinstance(make_trainer(records, variant="BiLSTM").g_optimizer, torch.optim.RMSprop)
    assert make_trainer(records, variant="CRN-MSE").d_optimizer is None


def test_bad_quality_plugin_fails_at_construction(records):
    with pytest.raises(PluginError):
        make_trainer(
            records, variant="M-CRGAN", batch_size=1,
            q_metric="plugin:/nonexistent/pesq",
        )


# ---------------------------------------------------------------------------
# digests and the freeze contract
# ---------------------------------------------------------------------------

def test_parameter_digest_tracks_changes():
    model = torch.nn.Linear(4, 2)
    before = train.parameter_digest(model)
    assert before == train.parameter_digest(model)
    with torch.no_grad():
        model.weight[0, 0] += 1.0
    assert train.parameter_digest(model) != before


def test_freeze_contract_alternating_steps(records):
    for variant in ("W-CRGAN", "Ra-CGAN"):
        tr = make_trainer(records, variant=variant)
        batch = next(iter(tr._epoch_batches(1)))
        for _ in range(3):
            g_before = train.parameter_digest(tr.model.generator)
            tr.d_step(batch)
            assert train.parameter_digest(tr.model.generator) == g_before, variant
            d_before = train.parameter_digest(tr.model.discriminator)
            tr.g_step(batch)
            assert train.parameter_digest(tr.model.discriminator) == d_before, variant
            # both sides must also actually move on their own steps
            assert train.parameter_digest(tr.model.generator) != g_before, variant


def test_requires_grad_restored_after_steps(records):
    tr = make_trainer(records)
    batch = next(iter(tr._epoch_batches(1)))
    tr.d_step(batch)
    assert all(p.requires_grad for p in tr.model.generator.parameters())
    tr.g_step(batch)
    assert all(p.requires_grad for p in tr.model.discriminator.parameters())


def test_gan_step_component_keys(records):
    cases = {
        "W-CRGAN": ({"d_adversarial", "gp", "d_total"}, {"g_adversarial", "l1", "g_total"}),
        "R-CGAN": ({"d_adversarial", "gp", "d_total"}, {"g_adversarial", "l1", "g_total"}),
    }
    for variant, (d_keys, g_keys) in cases.items():
        tr = make_trainer(records, variant=variant)
        batch = next(iter(tr._epoch_batches(1)))
        d_out = tr.d_step(batch)
        g_out = tr.g_step(batch)
        assert set(d_out) - {"_weights"} == d_keys, variant
        assert set(g_out) - {"_weights"} == g_keys, variant
        assert d_out["_weights"]["gp"] == 10.0
        assert g_out["_weights"]["l1"] == 200.0


def test_metric_step_component_keys(records):
    tr = make_trainer(records, variant="M-CRGAN-MSE", batch_size=1)
    batch = next(iter(tr._epoch_batches(1)))
    d_out = tr.d_step(batch)
    g_out = tr.g_step(batch)
    assert set(d_out) - {"_weights"} == {"metric_regression", "d_total"}
    assert set(g_out) - {"_weights"} == {"g_adversarial", "mse", "g_total"}
    assert g_out["_weights"]["mse"] == 4.0
    assert g_out["g_total"] == pytest.approx(
        g_out["g_adversarial"] + 4.0 * g_out["mse"], rel=1e-6
    )


def test_supervised_step_is_mse_only(records):
    tr = make_trainer(records, variant="CRN-MSE")
    batch = next(iter(tr._epoch_batches(1)))
    out = tr.g_step(batch)
    assert set(out) - {"_weights"} == {"mse", "g_total"}
    assert out["g_total"] == pytest.approx(out["mse"])


# ---------------------------------------------------------------------------
# batching determinism
# ---------------------------------------------------------------------------

def test_epoch_batches_cover_each_chunk_once(records):
    tr = make_trainer(records, variant="CRN-MSE", batch_size=2)
    ids = [it.record_id for b in tr._epoch_batches(1) for it in b.items]
    assert sorted(ids) == sorted(it.record_id for it in tr.items)
    # same epoch number -> identical order; next epoch -> a different shuffle
    again = [it.record_id for b in tr._epoch_batches(1) for it in b.items]
    assert ids == again
    other = [it.record_id for b in tr._epoch_batches(2) for it in b.items]
    assert ids != other


def test_metric_sampling_uses_utterances_per_epoch(records):
    tr = make_trainer(
        records, variant="M-CRGAN", batch_size=1, utterances_per_epoch=9
    )
    batches = list(tr._epoch_batches(1))
    assert len(batches) == 9
    assert all(b.features.shape[0] == 1 for b in batches)


# ---------------------------------------------------------------------------
# epoch logs and the divergence guard
# ---------------------------------------------------------------------------

def test_train_epoch_logs_consistent_rows(records, tmp_path):
    tr = make_trainer(records, variant="Ra-CRGAN", batch_size=3)
    log = tmp_path / "log.jsonl"
    with log.open("w") as fh:
        summary = tr.train_epoch(1, fh)
    rows = [json.loads(l) for l in log.read_text().splitlines()]
    steps = [r for r in rows if not r.get("summary")]
    assert len(steps) == summary["steps"] == 2  # 6 utterances / batch 3
    for row in steps:
        assert {"epoch", "step", "wall_time", "d_total", "g_total"} <= set(row)
        resum = row["g_adversarial"] + 200.0 * row["l1"]
        assert row["g_total"] == pytest.approx(resum, rel=1e-5)
        resum_d = row["d_adversarial"] + 10.0 * row["gp"]
        assert row["d_total"] == pytest.approx(resum_d, rel=1e-5)
    assert rows[-1]["summary"] and rows[-1]["mean_g_total"] == pytest.approx(
        np.mean([r["g_total"] for r in steps])
    )


def test_d_steps_per_g_ratio(records, tmp_path):
    tr = make_trainer(records, variant="W-CGAN", batch_size=3, d_steps_per_g=2)
    before = train.parameter_digest(tr.model.discriminator)
    log = tmp_path / "log.jsonl"
    with log.open("w") as fh:
        tr.train_epoch(1, fh)
    assert train.parameter_digest(tr.model.discriminator) != before
    rows = [json.loads(l) for l in log.read_text().splitlines()]
    # one merged row per g step even with multiple d sub-steps
    assert len([r for r in rows if not r.get("summary")]) == 2


def test_divergence_guard_raises_with_diagnostic(records):
    tr = make_trainer(records, variant="CRN-MSE")
    batch = next(iter(tr._epoch_batches(1)))
    with torch.no_grad():
        next(tr.model.generator.parameters())[0] = float("nan")
    with pytest.raises(TrainingDiverged) as err:
        tr._epoch = 1
        tr.g_step(batch)
    assert "mse" in str(err.value)


def test_validation_split_reports_quality(records):
    tr = make_trainer(records, variant="CRN-MSE", validation_fraction=0.2)
    assert len(tr.val_audio) == 1  # round(0.2 * 6)
    assert len(tr.train_features) == 5
    summary = tr.train_epoch(1)
    assert 0.0 <= summary["validation_quality"] <= 1.0
    assert 0.0 <= summary["validation_stoi"] <= 1.0


# ---------------------------------------------------------------------------
# checkpoints and resume
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(records, tmp_path):
    tr = make_trainer(records, variant="R-CRGAN", epochs=1)
    tr.run(out_dir=tmp_path)
    ckpt = tmp_path / "checkpoint-epoch-0001.pt"
    assert ckpt.exists() and (tmp_path / "checkpoint-last.pt").exists()

    payload = train.load_checkpoint_payload(ckpt)
    assert payload["variant"] == "R-CRGAN"
    assert payload["epoch"] == 1

    model = train.load_model(ckpt)
    assert train.parameter_digest(model.generator) == train.parameter_digest(
        tr.model.generator
    )
    assert not model.generator.training  # ships in eval mode


def test_restore_rejects_wrong_variant(records, tmp_path):
    tr = make_trainer(records, variant="W-CRGAN", epochs=1)
    tr.run(out_dir=tmp_path)
    other = make_trainer(records, variant="R-CRGAN", epochs=1)
    with pytest.raises(CheckpointError):
        other.restore(tmp_path / "checkpoint-last.pt")
    with pytest.raises(CheckpointError):
        train.load_checkpoint_payload(tmp_path / "missing.pt")


def test_resume_matches_uninterrupted_run(records, tmp_path):
    kwargs = dict(variant="W-CRGAN", batch_size=4, seed=5, validation_fraction=0.0)

    full = Trainer(records, TrainConfig(epochs=4, **kwargs))
    full.run(out_dir=tmp_path / "full")

    part = Trainer(records, TrainConfig(epochs=2, **kwargs))
    part.run(out_dir=tmp_path / "part")
    cont = Trainer(records, TrainConfig(epochs=4, **kwargs))
    cont.run(out_dir=tmp_path / "part", resume=tmp_path / "part/checkpoint-epoch-0002.pt")

    def log_rows(path):
        return [json.loads(l) for l in (path / "training_log.jsonl").read_text().splitlines()]

    full_rows, part_rows = log_rows(tmp_path / "full"), log_rows(tmp_path / "part")
    assert len(full_rows) == len(part_rows)
    for a, b in zip(full_rows, part_rows):
        assert a.keys() == b.keys()
        for key in a:
            if key == "wall_time":
                continue
            if isinstance(a[key], float):
                assert a[key] == pytest.approx(b[key], abs=1e-12), key
            else:
                assert a[key] == b[key], key
    assert train.parameter_digest(full.model.generator) == train.parameter_digest(
        cont.model.generator
    )
    assert train.parameter_digest(full.model.discriminator) == train.parameter_digest(
        cont.model.discriminator
    )


def test_trainer_requires_train_records():
    test_only = corpus.build_manifest(
        corpus.CorpusConfig(n_train=1, n_test=1, duration_s=1.2, seed=1)
    )[1:]
    with pytest.raises(ValueError):
        Trainer(test_only, TrainConfig(variant="CRN-MSE", validation_fraction=0.0))


def test_trainer_rejects_too_short_utterances():
    records = corpus.build_manifest(
        corpus.CorpusConfig(n_train=2, n_test=0, duration_s=0.5, seed=1)
    )
    with pytest.raises(ValueError):
        # 0.5 s -> 46 frames < 100-frame chunks under the drop policy
        Trainer(records, TrainConfig(variant="CRN-MSE", validation_fraction=0.0))
