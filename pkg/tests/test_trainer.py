"""Batching, the training loop, and checkpoint round trips."""

import numpy as np
import pytest

from emg2artic import nn_core as nc
from emg2artic.model import EncoderConfig, LossWeights, frame_length, init_params
from emg2artic.trainer import (
    TrainConfig,
    TrainHistory,
    TrainItem,
    clip_gradients,
    load_checkpoint,
    make_batches,
    save_checkpoint,
    train,
    validate,
)


def tiny_config():
    return EncoderConfig(
        n_emg_channels=2, hidden_dim=8, n_transformer_layers=1, n_heads=2,
        phoneme_vocab=5,
    )


def make_items(n, seed=0, t_lo=64, t_hi=160, channels=2, vocab=5):
    """Utterances whose targets are smooth functions of the EMG itself,
    so a few epochs of fitting measurably lowers the loss."""
    rng = nc.RngState(seed)
    items = []
    for i in range(n):
        t = t_lo + int(rng.integers(t_hi - t_lo))
        emg = rng.normal((t, channels))
        n_f = frame_length(t)
        # frame targets: strided projections of the input plus noise
        base = emg[: n_f * 8 : 8, 0] if n_f * 8 <= t else emg[:n_f, 0]
        base = base[:n_f]
        if base.size < n_f:
            base = np.pad(base, (0, n_f - base.size))
        ema = np.stack([np.roll(base, d) * 0.2 for d in range(12)], axis=1)
        items.append(
            TrainItem(
                utterance_id=f"utt_{i:04d}",
                emg=emg,
                ema=ema,
                pitch=0.3 * base,
                loudness=np.abs(base),
                phonemes=rng.integers(vocab, (n_f,)),
            )
        )
    return items


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def test_make_batches_partitions_everything():
    items = make_items(10, seed=1)
    batches = make_batches(items, batch_size=3, seed=0, epoch=1)
    assert len(batches) == 4
    seen = [uid for b in batches for uid in b.utterance_ids]
    assert sorted(seen) == sorted(it.utterance_id for it in items)


def test_make_batches_deterministic_and_epoch_sensitive():
    items = make_items(12, seed=2)
    a = make_batches(items, 4, seed=5, epoch=1)
    b = make_batches(items, 4, seed=5, epoch=1)
    c = make_batches(items, 4, seed=5, epoch=2)
    ids = lambda bs: [b.utterance_ids for b in bs]
    assert ids(a) == ids(b)
    assert ids(a) != ids(c)
    for ba, bb in zip(a, b):
        assert np.array_equal(ba.emg, bb.emg)


def test_make_batches_groups_similar_lengths():
    items = make_items(16, seed=3, t_lo=64, t_hi=400)
    batches = make_batches(items, 4, seed=0, epoch=1)
    # chunking a sorted order means the bucket spreads sum to at most the
    # global spread
    global_spread = max(it.emg.shape[0] for it in items) - min(
        it.emg.shape[0] for it in items
    )
    spreads = [int(b.emg_lengths.max() - b.emg_lengths.min()) for b in batches]
    assert sum(spreads) <= global_spread
    assert max(spreads) < global_spread


def test_batch_padding_is_zero():
    items = make_items(5, seed=4)
    (batch,) = make_batches(items, 5, seed=0, epoch=1)
    for i, n in enumerate(batch.emg_lengths):
        assert np.all(batch.emg[i, int(n):] == 0.0)
    for i, n in enumerate(batch.target_lengths):
        assert np.all(batch.ema[i, int(n):] == 0.0)
        assert np.all(batch.phonemes[i, int(n):] == 0)


def test_make_batches_empty_corpus_error():
    with pytest.raises(ValueError, match="empty"):
        make_batches([], 4, seed=0, epoch=1)


# ---------------------------------------------------------------------------
# history CSV
# ---------------------------------------------------------------------------

def test_history_csv_roundtrip():
    h = TrainHistory()
    h.add({"epoch": 1, "l_total": 2.5, "l_ema": 1.0, "l_pitch": 0.5,
           "l_loud": 0.75, "l_phon": 0.5, "val_l_total": 2.6, "val_l_ema": 1.1,
           "val_l_pitch": 0.5, "val_l_loud": 0.7, "val_l_phon": 0.6,
           "val_r_ema": None, "val_r_loud": None, "val_r_pitch": None})
    h.add({"epoch": 2, "l_total": 2.0, "l_ema": 0.9, "l_pitch": 0.4,
           "l_loud": 0.6, "l_phon": 0.4, "val_l_total": 2.1, "val_l_ema": 1.0,
           "val_l_pitch": 0.45, "val_l_loud": 0.6, "val_l_phon": 0.5,
           "val_r_ema": 0.31, "val_r_loud": 0.22, "val_r_pitch": 0.05})
    text = h.to_csv()
    lines = text.strip().split("\n")
    assert lines[0].startswith("epoch,l_total,l_ema,l_pitch,l_loud,l_phon,val_l_total")
    back = TrainHistory.from_csv(text)
    assert back.records[0]["epoch"] == 1
    assert back.records[0]["val_r_ema"] is None
    assert back.records[1]["val_r_ema"] == pytest.approx(0.31)
    assert back.records[1]["l_total"] == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# gradient clipping
# ---------------------------------------------------------------------------

def test_clip_gradients_scales_to_max_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([0.0, 4.0])}
    norm = clip_gradients(g, max_norm=1.0)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
    assert total == pytest.approx(1.0)
    assert g["a"][0] == pytest.approx(0.6)


def test_clip_gradients_leaves_small_norms_alone():
    g = {"a": np.array([0.3, 0.4])}
    clip_gradients(g, max_norm=10.0)
    assert np.allclose(g["a"], [0.3, 0.4])


def test_clip_gradients_disabled_by_nonpositive():
    g = {"a": np.array([30.0, 40.0])}
    norm = clip_gradients(g, max_norm=0.0)
    assert norm == pytest.approx(50.0)
    assert np.allclose(g["a"], [30.0, 40.0])


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def small_train_cfg(**kw):
    base = dict(batch_size=4, learning_rate=2e-3, n_epochs=3, seed=0, eval_every=2)
    base.update(kw)
    return TrainConfig(**base)


def test_train_loss_decreases():
    items = make_items(8, seed=10)
    result = train(items, items[:2], tiny_config(), small_train_cfg(n_epochs=5))
    first = result.history.records[0]["l_total"]
    last = result.history.records[-1]["l_total"]
    assert last < first


def test_train_is_deterministic():
    items = make_items(6, seed=11)
    cfg, tc = tiny_config(), small_train_cfg()
    r1 = train(items, items[:2], cfg, tc)
    r2 = train(items, items[:2], cfg, tc)
    assert r1.history.records == r2.history.records
    for k in r1.final.params:
        assert np.array_equal(r1.final.params[k].data, r2.final.params[k].data)
    for k in r1.final.buffers:
        assert np.array_equal(r1.final.buffers[k], r2.final.buffers[k])


def test_history_has_all_epochs_and_correlation_cadence():
    items = make_items(6, seed=12)
    result = train(items, items[:2], tiny_config(), small_train_cfg(n_epochs=5, eval_every=2))
    recs = result.history.records
    assert [r["epoch"] for r in recs] == [1, 2, 3, 4, 5]
    for r in recs:
        assert r["val_l_total"] is not None and np.isfinite(r["val_l_total"])
    # correlations computed on the eval cadence and at the final epoch
    have = [r["epoch"] for r in recs if r.get("val_r_ema") is not None]
    assert have == [2, 4, 5]


def test_best_checkpoint_is_lowest_val_loss():
    items = make_items(8, seed=13)
    result = train(items, items[:3], tiny_config(), small_train_cfg(n_epochs=4))
    vals = [r["val_l_total"] for r in result.history.records]
    assert result.best_epoch == int(np.argmin(vals)) + 1


def test_validate_mutates_nothing():
    items = make_items(4, seed=14)
    cfg = tiny_config()
    mp = init_params(cfg, seed=1)
    # make running stats non-trivial first
    mp.buffers["block0.bn1.running_mean"][:] = 0.3
    before_p = {k: t.data.copy() for k, t in mp.params.items()}
    before_b = {k: v.copy() for k, v in mp.buffers.items()}
    rec = validate(items, mp, cfg, LossWeights(), batch_size=2, with_correlations=True)
    assert np.isfinite(rec["val_l_total"])
    for k in before_p:
        assert np.array_equal(mp.params[k].data, before_p[k])
    for k in before_b:
        assert np.array_equal(mp.buffers[k], before_b[k])


def test_train_zero_epochs_returns_init():
    items = make_items(4, seed=15)
    cfg = tiny_config()
    result = train(items, items[:2], cfg, small_train_cfg(n_epochs=0))
    ref = init_params(cfg, seed=0)
    for k in ref.params:
        assert np.array_equal(result.final.params[k].data, ref.params[k].data)
    assert result.history.records == []
    assert result.best_epoch == 0


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    cfg = tiny_config()
    mp = init_params(cfg, seed=9)
    mp.buffers["block1.bn2.running_var"][:] = 2.5
    w = LossWeights(alpha_pitch=0.25)
    save_checkpoint(mp, cfg, w, tmp_path / "ck")
    mp2, cfg2, w2 = load_checkpoint(tmp_path / "ck")
    assert cfg2 == cfg
    assert w2 == w
    for k, t in mp.params.items():
        # storage is float32; compare against the quantized original
        assert np.array_equal(mp2.params[k].data, t.data.astype("<f4").astype(np.float64))
    assert np.allclose(mp2.buffers["block1.bn2.running_var"], 2.5)


def test_checkpoint_reload_is_stable(tmp_path):
    # save -> load -> save produces byte-identical weight files
    cfg = tiny_config()
    mp = init_params(cfg, seed=3)
    save_checkpoint(mp, cfg, LossWeights(), tmp_path / "a")
    mp2, cfg2, w2 = load_checkpoint(tmp_path / "a")
    save_checkpoint(mp2, cfg2, w2, tmp_path / "b")
    assert (tmp_path / "a" / "weights.bin").read_bytes() == (
        tmp_path / "b" / "weights.bin"
    ).read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (
        tmp_path / "b" / "manifest.json"
    ).read_bytes()


def test_checkpoint_missing_parameter_rejected(tmp_path):
    import json

    cfg = tiny_config()
    mp = init_params(cfg, seed=9)
    save_checkpoint(mp, cfg, LossWeights(), tmp_path / "ck")
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    manifest = [e for e in manifest if e["name"] != "head_ema.W"]
    (tmp_path / "ck" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    import json

    cfg = tiny_config()
    mp = init_params(cfg, seed=9)
    save_checkpoint(mp, cfg, LossWeights(), tmp_path / "ck")
    meta_path = tmp_path / "ck" / "model_config.json"
    meta = json.loads(meta_path.read_text())
    meta["encoder"]["hidden_dim"] = 16
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="shape|missing"):
        load_checkpoint(tmp_path / "ck")


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    cfg = TrainConfig()
    assert cfg.batch_size == 32
    assert cfg.learning_rate == pytest.approx(5e-4)
    assert cfg.weight_decay == pytest.approx(1e-7)
    assert cfg.n_epochs == 80
    assert cfg.eval_every == 5
    assert cfg.grad_clip_norm == pytest.approx(10.0)
