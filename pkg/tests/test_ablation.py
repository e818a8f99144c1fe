"""Electrode sets, condition construction, heatmaps, subset selection,
and a micro end-to-end sweep."""

import numpy as np
import pytest

from emg2artic import nn_core as nc
from emg2artic.ablation import (
    AblationSweep,
    ElectrodeSet,
    build_heatmap,
    condition_seed,
    full_condition,
    full_set,
    mask_electrodes,
    read_sweep,
    remove_one,
    run_condition,
    run_sweep,
    select_subset,
    subset_condition,
    sweep_conditions,
    use_only_one,
)
from emg2artic.eval_metrics import REPORT_ROWS, CorrelationReport
from emg2artic.feature_targets import EMA_SENSORS
from emg2artic.model import EncoderConfig, frame_length
from emg2artic.trainer import TrainConfig, TrainItem


def stub_report(r_by_row: dict, default: float = 0.1) -> CorrelationReport:
    entries = {}
    for name in REPORT_ROWS:
        r = r_by_row.get(name, default)
        entries[name] = {"r": r, "ci_low": r - 0.05, "ci_high": r + 0.05}
    return CorrelationReport(entries=entries, n_utterances=10, n_skipped=0)


def make_items(n, seed=0, channels=8, t_lo=64, t_hi=128):
    rng = nc.RngState(seed)
    items = []
    for i in range(n):
        t = t_lo + int(rng.integers(t_hi - t_lo))
        emg = rng.normal((t, channels))
        n_f = frame_length(t)
        items.append(
            TrainItem(
                utterance_id=f"utt_{i:04d}",
                emg=emg,
                ema=rng.normal((n_f, 12)),
                pitch=rng.normal((n_f,)),
                loudness=rng.normal((n_f,)) ** 2,
                phonemes=rng.integers(5, (n_f,)),
            )
        )
    return items


# ---------------------------------------------------------------------------
# electrode sets and conditions
# ---------------------------------------------------------------------------

def test_electrode_set_validation():
    assert ElectrodeSet((3, 1, 2)).ids == (1, 2, 3)  # stored ascending
    assert len(full_set()) == 8
    assert 4 in full_set()
    with pytest.raises(ValueError, match="nonempty"):
        ElectrodeSet(())
    with pytest.raises(ValueError, match="duplicate"):
        ElectrodeSet((2, 2))
    with pytest.raises(ValueError, match="outside"):
        ElectrodeSet((0,))
    with pytest.raises(ValueError, match="outside"):
        ElectrodeSet((9,))


def test_condition_names_and_membership():
    assert full_condition().name == "full"
    rm = remove_one(3)
    assert rm.name == "remove_3"
    assert rm.electrodes.ids == (1, 2, 4, 5, 6, 7, 8)
    uo = use_only_one(5)
    assert uo.name == "useonly_5"
    assert uo.electrodes.ids == (5,)
    sub = subset_condition((4, 2))
    assert sub.name == "subset_2_4"
    assert sub.electrodes.ids == (2, 4)
    with pytest.raises(ValueError):
        remove_one(9)
    with pytest.raises(ValueError):
        use_only_one(0)


def test_condition_seeds_distinct_and_stable():
    conds = sweep_conditions()
    assert len(conds) == 17
    seeds = [condition_seed(42, c) for c in conds]
    assert len(set(seeds)) == 17
    assert condition_seed(42, remove_one(2)) == condition_seed(42, remove_one(2))
    assert condition_seed(42, remove_one(2)) != condition_seed(43, remove_one(2))


# ---------------------------------------------------------------------------
# channel masking
# ---------------------------------------------------------------------------

def test_mask_electrodes_full_set_is_identity():
    items = make_items(3, seed=1)
    masked = mask_electrodes(items, full_set())
    for a, b in zip(items, masked):
        assert np.array_equal(a.emg, b.emg)
        assert np.array_equal(a.ema, b.ema)


def test_mask_electrodes_selects_columns_in_id_order():
    items = make_items(2, seed=2)
    masked = mask_electrodes(items, ElectrodeSet((4, 2)))
    for a, b in zip(items, masked):
        assert b.emg.shape[1] == 2
        assert np.array_equal(b.emg[:, 0], a.emg[:, 1])  # id 2 -> column 1
        assert np.array_equal(b.emg[:, 1], a.emg[:, 3])  # id 4 -> column 3


def test_mask_electrodes_out_of_range_for_corpus():
    items = make_items(1, seed=3, channels=2)
    with pytest.raises(ValueError, match="out of range"):
        mask_electrodes(items, ElectrodeSet((3,)))


# ---------------------------------------------------------------------------
# heatmaps
# ---------------------------------------------------------------------------

def family_stubs(make):
    return {i: make(i) for i in range(1, 9)}


def test_build_heatmap_identical_reports_zero_drop():
    full = stub_report({}, default=0.5)
    fam = family_stubs(lambda i: stub_report({}, default=0.5))
    hm = build_heatmap(full, fam, "remove")
    assert hm.matrix.shape == (8, 6)
    assert np.allclose(hm.matrix, 0.0)
    assert np.allclose(hm.pitch, 0.0)
    assert np.allclose(hm.loudness, 0.0)


def test_build_heatmap_remove_uses_drop_rate():
    full = stub_report({s: 0.8 for s in EMA_SENSORS}, default=0.8)
    fam = family_stubs(lambda i: stub_report({"TT": 0.4 if i == 2 else 0.8}, default=0.8))
    hm = build_heatmap(full, fam, "remove")
    tt = list(EMA_SENSORS).index("TT")
    assert hm.matrix[1, tt] == pytest.approx(0.5)  # electrode 2 row
    assert hm.matrix[0, tt] == pytest.approx(0.0)
    # the loudness vector follows the same rule
    fam2 = family_stubs(lambda i: stub_report({"loudness": 0.2 if i == 4 else 0.8}, default=0.8))
    hm2 = build_heatmap(full, fam2, "remove")
    assert int(np.argmax(hm2.loudness)) + 1 == 4


def test_build_heatmap_useonly_keeps_raw_correlations():
    full = stub_report({}, default=0.9)
    fam = family_stubs(lambda i: stub_report({"TT": 0.85 if i == 2 else 0.1}, default=0.1))
    hm = build_heatmap(full, fam, "useonly")
    tt = list(EMA_SENSORS).index("TT")
    assert hm.matrix[1, tt] == pytest.approx(0.85)
    assert int(np.argmax(hm.matrix[:, tt])) + 1 == 2


def test_build_heatmap_missing_condition_rejected():
    full = stub_report({}, default=0.5)
    fam = family_stubs(lambda i: stub_report({}, default=0.5))
    del fam[6]
    with pytest.raises(ValueError, match="missing"):
        build_heatmap(full, fam, "remove")


def test_build_heatmap_nonfinite_rejected():
    full = stub_report({}, default=0.5)
    fam = family_stubs(lambda i: stub_report({}, default=0.5))
    fam[3] = stub_report({"TB": float("nan")}, default=0.5)
    with pytest.raises(ValueError, match="finite"):
        build_heatmap(full, fam, "useonly")


def test_heatmap_csv_layout():
    full = stub_report({}, default=0.5)
    fam = family_stubs(lambda i: stub_report({}, default=0.5))
    hm = build_heatmap(full, fam, "useonly")
    text = hm.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "UL,LL,LI,TT,TB,TD"
    assert len(lines) == 9
    assert all(len(line.split(",")) == 6 for line in lines[1:])


# ---------------------------------------------------------------------------
# subset selection
# ---------------------------------------------------------------------------

def two_block_reports():
    """Electrode 2 carries the tongue groups, electrode 4 pitch+loudness;
    everything else is noise."""
    reports = {}
    for i in range(1, 9):
        r = {}
        if i == 2:
            r = {"TT": 0.9, "TB": 0.85, "TD": 0.8}
        if i == 4:
            r = {"pitch": 0.7, "loudness": 0.95}
        reports[i] = stub_report(r, default=0.05)
    return reports


def test_select_subset_two_blocks_recovers_drivers():
    sel = select_subset(two_block_reports(), k=2)
    assert set(sel.ids) == {2, 4}
    assert len(sel.justifications) == 2
    joined = " ".join(sel.justifications)
    assert "TT" in joined
    assert "loudness" in joined


def test_select_subset_k8_returns_everything():
    sel = select_subset(two_block_reports(), k=8)
    assert sorted(sel.ids) == list(range(1, 9))
    assert len(sel.justifications) == 8


def test_select_subset_each_pick_names_groups():
    sel = select_subset(two_block_reports(), k=4)
    for j in sel.justifications:
        assert j.startswith("electrode ")


def test_select_subset_deterministic():
    a = select_subset(two_block_reports(), k=4)
    b = select_subset(two_block_reports(), k=4)
    assert a.ids == b.ids
    assert a.justifications == b.justifications


def test_select_subset_tie_breaks_by_mean_then_id():
    # electrodes 1 and 2 each top exactly one group with the same r, but 2
    # has the higher mean elsewhere
    reports = {}
    for i in range(1, 9):
        r = {}
        if i == 1:
            r = {"UL": 0.9}
        if i == 2:
            r = {"TT": 0.9, "TB": 0.5}
        reports[i] = stub_report(r, default=0.05)
    sel = select_subset(reports, k=1)
    assert sel.ids == (2,)
    # with exactly matching score profiles the lower id wins; the values
    # are binary-exact so the means tie bit-for-bit
    reports[1] = stub_report({"UL": 1.0}, default=0.25)
    reports[2] = stub_report({"TT": 1.0}, default=0.25)
    sel = select_subset(reports, k=1)
    assert sel.ids == (1,)


def test_select_subset_k_out_of_range():
    with pytest.raises(ValueError):
        select_subset(two_block_reports(), k=0)
    with pytest.raises(ValueError):
        select_subset(two_block_reports(), k=9)


# ---------------------------------------------------------------------------
# micro sweep (end to end, tiny everything)
# ---------------------------------------------------------------------------

def micro_cfgs():
    model_cfg = EncoderConfig(
        n_emg_channels=8, hidden_dim=8, n_transformer_layers=1, n_heads=2,
        phoneme_vocab=5,
    )
    train_cfg = TrainConfig(batch_size=4, learning_rate=1e-3, n_epochs=1, seed=11)
    return model_cfg, train_cfg


def test_run_condition_deterministic(tmp_path):
    items = make_items(6, seed=5)
    model_cfg, train_cfg = micro_cfgs()
    cond = use_only_one(3)
    r1 = run_condition(items, items[:2], items[:3], cond, model_cfg, train_cfg)
    r2 = run_condition(items, items[:2], items[:3], cond, model_cfg, train_cfg,
                       out_dir=tmp_path / "c")
    assert r1.to_json() == r2.to_json()
    assert (tmp_path / "c" / "correlation_report.json").exists()
    assert (tmp_path / "c" / "history.csv").exists()
    assert (tmp_path / "c" / "best" / "weights.bin").exists()


def test_run_sweep_micro(tmp_path):
    items = make_items(6, seed=6)
    model_cfg, train_cfg = micro_cfgs()
    sweep = run_sweep(
        items, items[:2], items[:3], model_cfg, train_cfg, out_dir=tmp_path
    )
    assert len(sweep.conditions) == 17
    assert set(sweep.heatmaps) == {"remove", "useonly"}
    assert sweep.heatmaps["remove"].matrix.shape == (8, 6)
    # files
    assert (tmp_path / "ablation_report.json").exists()
    assert (tmp_path / "heatmap_remove.csv").exists()
    assert (tmp_path / "heatmap_useonly.csv").exists()
    assert (tmp_path / "useonly" / "useonly_4" / "correlation_report.json").exists()
    assert (tmp_path / "remove" / "remove_1" / "history.csv").exists()
    # roundtrip
    back = read_sweep(tmp_path)
    assert set(back.conditions) == set(sweep.conditions)
    assert np.allclose(
        back.heatmaps["useonly"].matrix, sweep.heatmaps["useonly"].matrix
    )
    assert back.to_json() == sweep.to_json()


def test_run_sweep_parallel_matches_serial(tmp_path):
    items = make_items(5, seed=7, t_lo=64, t_hi=96)
    model_cfg, train_cfg = micro_cfgs()
    fams = ("useonly",)
    serial = run_sweep(items, items[:2], items[:2], model_cfg, train_cfg,
                       families=fams, workers=1)
    parallel = run_sweep(items, items[:2], items[:2], model_cfg, train_cfg,
                         families=fams, workers=2)
    assert serial.to_json() == parallel.to_json()
