"""Electrode-contribution experiments.

Two condition families quantify what each electrode carries: remove-one
(train without it, measure the correlation drop against the full model)
and use-only-one (train on it alone, measure what survives). Models are
retrained per condition rather than input-zeroed, since channel
statistics differ between conditions. Each condition derives its own
seed from the sweep seed and the condition name, so runs are independent
but reproducible, and a full sweep is 1 + 8 + 8 = 17 trainings.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .eval_metrics import (
    CorrelationReport,
    drop_rate,
    evaluate,
    write_report,
)
from .feature_targets import EMA_SENSORS
from .model import EncoderConfig, LossWeights
from .nn_core import fnv1a64
from .trainer import (
    TrainConfig,
    TrainItem,
    predict_items,
    save_checkpoint,
    train,
)

N_ELECTRODES = 8
# selection targets: per-sensor EMA means plus the two prosodic features
FEATURE_GROUPS = EMA_SENSORS + ("pitch", "loudness")

ABLATION_REPORT_FILE = "ablation_report.json"
HEATMAP_CSV = {"remove": "heatmap_remove.csv", "useonly": "heatmap_useonly.csv"}


@dataclass(frozen=True)
class ElectrodeSet:
    """Nonempty, duplicate-free subset of the 8 electrode ids, ascending."""

    ids: tuple

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        if not ids:
            raise ValueError("electrode set must be nonempty")
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate electrode ids: {ids}")
        for i in ids:
            if not 1 <= i <= N_ELECTRODES:
                raise ValueError(f"electrode id {i} outside 1..{N_ELECTRODES}")
        object.__setattr__(self, "ids", tuple(sorted(ids)))

    def __len__(self):
        return len(self.ids)

    def __contains__(self, i):
        return i in self.ids


def full_set() -> ElectrodeSet:
    return ElectrodeSet(tuple(range(1, N_ELECTRODES + 1)))


@dataclass(frozen=True)
class AblationCondition:
    """One training condition: which electrodes the model may use."""

    kind: str  # full | remove | useonly | subset
    electrodes: ElectrodeSet
    target_id: int | None = None  # the removed / isolated electrode

    def __post_init__(self):
        if self.kind not in ("full", "remove", "useonly", "subset"):
            raise ValueError(f"unknown condition kind '{self.kind}'")

    @property
    def name(self) -> str:
        if self.kind == "full":
            return "full"
        if self.kind in ("remove", "useonly"):
            return f"{self.kind}_{self.target_id}"
        return "subset_" + "_".join(str(i) for i in self.electrodes.ids)


def full_condition() -> AblationCondition:
    return AblationCondition(kind="full", electrodes=full_set())


def remove_one(i: int) -> AblationCondition:
    kept = tuple(e for e in range(1, N_ELECTRODES + 1) if e != i)
    if len(kept) == N_ELECTRODES:
        raise ValueError(f"electrode id {i} outside 1..{N_ELECTRODES}")
    return AblationCondition(kind="remove", electrodes=ElectrodeSet(kept), target_id=i)


def use_only_one(i: int) -> AblationCondition:
    return AblationCondition(kind="useonly", electrodes=ElectrodeSet((i,)), target_id=i)


def subset_condition(ids) -> AblationCondition:
    return AblationCondition(kind="subset", electrodes=ElectrodeSet(tuple(ids)))


def condition_seed(base_seed: int, condition: AblationCondition) -> int:
    """Independent but reproducible per-condition seed."""
    return (int(base_seed) ^ fnv1a64(condition.name)) % 2**64


def mask_electrodes(items: list, eset: ElectrodeSet) -> list:
    """Channel view of the corpus keeping only the member electrodes.

    Electrode id i maps to channel index i-1; output channels follow
    ascending id order.
    """
    if not items:
        return []
    n_ch = items[0].emg.shape[1]
    for i in eset.ids:
        if i > n_ch:
            raise ValueError(f"electrode id {i} out of range for {n_ch} channels")
    cols = [i - 1 for i in eset.ids]
    return [
        TrainItem(
            utterance_id=it.utterance_id,
            emg=it.emg[:, cols],
            ema=it.ema,
            pitch=it.pitch,
            loudness=it.loudness,
            phonemes=it.phonemes,
        )
        for it in items
    ]


def run_condition(
    train_items: list,
    val_items: list,
    test_items: list,
    condition: AblationCondition,
    model_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    weights: LossWeights | None = None,
    out_dir=None,
    log=None,
) -> CorrelationReport:
    """Train a fresh model restricted to the condition's electrodes and
    evaluate it on the test split."""
    if weights is None:
        weights = LossWeights()
    seed = condition_seed(train_cfg.seed, condition)
    cond_model_cfg = replace(model_cfg, n_emg_channels=len(condition.electrodes))
    cond_train_cfg = replace(train_cfg, seed=seed)
    tr = mask_electrodes(train_items, condition.electrodes)
    va = mask_electrodes(val_items, condition.electrodes)
    te = mask_electrodes(test_items, condition.electrodes)
    result = train(tr, va, cond_model_cfg, cond_train_cfg, weights=weights, log=log)
    preds = predict_items(te, result.best, cond_model_cfg, cond_train_cfg.batch_size)
    report = evaluate(preds, seed=seed)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "history.csv").write_text(result.history.to_csv())
        write_report(report, out_dir)
        save_checkpoint(result.best, cond_model_cfg, weights, out_dir / "best")
    return report


@dataclass
class Heatmap:
    """Electrode-by-sensor association map for one condition family.

    remove: entries are correlation drop rates against the full model
    (larger = the electrode mattered more). useonly: entries are the raw
    correlations a single electrode achieves (larger = carries more).
    Both read "warmer = stronger association".
    """

    kind: str
    electrode_ids: tuple
    sensors: tuple
    matrix: np.ndarray  # [n_electrodes, 6]
    pitch: np.ndarray  # [n_electrodes]
    loudness: np.ndarray  # [n_electrodes]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "electrode_ids": list(self.electrode_ids),
            "sensors": list(self.sensors),
            "matrix": [[float(v) for v in row] for row in self.matrix],
            "pitch": [float(v) for v in self.pitch],
            "loudness": [float(v) for v in self.loudness],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Heatmap":
        return cls(
            kind=d["kind"],
            electrode_ids=tuple(d["electrode_ids"]),
            sensors=tuple(d["sensors"]),
            matrix=np.array(d["matrix"], dtype=np.float64),
            pitch=np.array(d["pitch"], dtype=np.float64),
            loudness=np.array(d["loudness"], dtype=np.float64),
        )

    def to_csv(self) -> str:
        lines = [",".join(self.sensors)]
        for row in self.matrix:
            lines.append(",".join(f"{v:.6f}" for v in row))
        return "\n".join(lines) + "\n"


def build_heatmap(
    full_report: CorrelationReport,
    per_electrode: dict,
    kind: str,
    n_electrodes: int = N_ELECTRODES,
) -> Heatmap:
    """Assemble the per-family association matrix from condition reports."""
    if kind not in ("remove", "useonly"):
        raise ValueError(f"unknown heatmap kind '{kind}'")
    expected = list(range(1, n_electrodes + 1))
    missing = [i for i in expected if i not in per_electrode]
    if missing:
        raise ValueError(f"missing {kind} condition reports for electrodes {missing}")

    def cell(rep: CorrelationReport, row_name: str) -> float:
        if kind == "remove":
            return drop_rate(full_report.r(row_name), rep.r(row_name))
        return rep.r(row_name)

    matrix = np.zeros((n_electrodes, len(EMA_SENSORS)))
    pitch = np.zeros(n_electrodes)
    loud = np.zeros(n_electrodes)
    for e in expected:
        rep = per_electrode[e]
        for s, sensor in enumerate(EMA_SENSORS):
            matrix[e - 1, s] = cell(rep, sensor)
        pitch[e - 1] = cell(rep, "pitch")
        loud[e - 1] = cell(rep, "loudness")
    if not (
        np.all(np.isfinite(matrix))
        and np.all(np.isfinite(pitch))
        and np.all(np.isfinite(loud))
    ):
        raise ValueError("heatmap entries must be finite; a condition produced "
                         "an undefined correlation")
    return Heatmap(
        kind=kind,
        electrode_ids=tuple(expected),
        sensors=EMA_SENSORS,
        matrix=matrix,
        pitch=pitch,
        loudness=loud,
    )


@dataclass
class SubsetSelection:
    """Greedy coverage pick: ids in pick order plus why each was chosen."""

    ids: tuple
    justifications: list

    @property
    def electrode_set(self) -> ElectrodeSet:
        return ElectrodeSet(self.ids)


def select_subset(
    useonly_reports: dict,
    k: int,
    n_electrodes: int = N_ELECTRODES,
) -> SubsetSelection:
    """Knowledge-driven electrode selection from use-only-one results.

    An electrode's score is its maximum use-only-one correlation across
    the feature groups (six EMA sensor means, pitch, loudness). Picks are
    greedy by score, constrained to electrodes that are the top scorer of
    at least one not-yet-covered group, so the set spreads across
    features instead of stacking on one; ties break by mean score, then
    lower id. Once every group is covered, remaining slots fill by the
    same ordering without the constraint.
    """
    if not 1 <= k <= n_electrodes:
        raise ValueError(f"k must be in 1..{n_electrodes}")
    expected = list(range(1, n_electrodes + 1))
    missing = [i for i in expected if i not in useonly_reports]
    if missing:
        raise ValueError(f"missing use-only-one reports for electrodes {missing}")
    score = {
        e: {g: float(useonly_reports[e].r(g)) for g in FEATURE_GROUPS}
        for e in expected
    }
    max_score = {e: max(score[e].values()) for e in expected}
    mean_score = {e: float(np.mean(list(score[e].values()))) for e in expected}
    rank = lambda e: (max_score[e], mean_score[e], -e)
    top_of = {}  # group -> electrode with the highest use-only correlation
    for g in FEATURE_GROUPS:
        top_of[g] = max(expected, key=lambda e: (score[e][g], -e))

    picks: list = []
    justifications: list = []
    covered: set = set()
    while len(picks) < k:
        uncovered = [g for g in FEATURE_GROUPS if g not in covered]
        candidates = sorted({top_of[g] for g in uncovered} - set(picks))
        if candidates:
            best = max(candidates, key=rank)
            got = [g for g in uncovered if top_of[g] == best]
            covered.update(got)
            picks.append(best)
            parts = ", ".join(
                f"{g} (use-only r={score[best][g]:.3f})" for g in got
            )
            justifications.append(f"electrode {best}: top-scoring for {parts}")
        else:
            rest = [e for e in expected if e not in picks]
            best = max(rest, key=rank)
            picks.append(best)
            justifications.append(
                f"electrode {best}: all feature groups covered; next-best score "
                f"(max use-only r={max_score[best]:.3f})"
            )
    return SubsetSelection(ids=tuple(picks), justifications=justifications)


# ---------------------------------------------------------------------------
# sweep orchestration
# ---------------------------------------------------------------------------

@dataclass
class AblationSweep:
    seed: int
    conditions: dict = field(default_factory=dict)  # name -> CorrelationReport
    heatmaps: dict = field(default_factory=dict)  # kind -> Heatmap
    model_config: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)

    def report_for(self, name: str) -> CorrelationReport:
        return self.conditions[name]

    def family(self, kind: str) -> dict:
        out = {}
        for name, rep in self.conditions.items():
            if name.startswith(f"{kind}_"):
                out[int(name.rsplit("_", 1)[1])] = rep
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_version": 1,
                "seed": self.seed,
                "model_config": self.model_config,
                "train_config": self.train_config,
                "conditions": {
                    name: json.loads(rep.to_json())
                    for name, rep in self.conditions.items()
                },
                "heatmaps": {k: h.to_dict() for k, h in self.heatmaps.items()},
            },
            indent=1, sort_keys=True,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AblationSweep":
        d = json.loads(text)
        return cls(
            seed=d["seed"],
            conditions={
                name: CorrelationReport.from_json(json.dumps(sub))
                for name, sub in d["conditions"].items()
            },
            heatmaps={k: Heatmap.from_dict(h) for k, h in d["heatmaps"].items()},
            model_config=d.get("model_config", {}),
            train_config=d.get("train_config", {}),
        )


def _condition_task(args):
    (train_items, val_items, test_items, condition, model_cfg, train_cfg,
     weights, out_dir) = args
    report = run_condition(
        train_items, val_items, test_items, condition, model_cfg, train_cfg,
        weights=weights, out_dir=out_dir,
    )
    return condition.name, report


def sweep_conditions(families=("remove", "useonly")) -> list:
    conds = [full_condition()]
    for fam in families:
        maker = remove_one if fam == "remove" else use_only_one
        conds.extend(maker(i) for i in range(1, N_ELECTRODES + 1))
    return conds


def run_sweep(
    train_items: list,
    val_items: list,
    test_items: list,
    model_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    weights: LossWeights | None = None,
    families=("remove", "useonly"),
    workers: int = 1,
    out_dir=None,
    log=None,
) -> AblationSweep:
    """Full electrode sweep: the baseline plus both condition families."""
    from dataclasses import asdict

    if weights is None:
        weights = LossWeights()
    conditions = sweep_conditions(families)
    tasks = []
    for cond in conditions:
        sub = None
        if out_dir is not None:
            sub = Path(out_dir) / cond.kind / cond.name
        tasks.append(
            (train_items, val_items, test_items, cond, model_cfg, train_cfg,
             weights, sub)
        )
    results: dict = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for name, report in ex.map(_condition_task, tasks):
                results[name] = report
                if log is not None:
                    log(f"condition {name} done")
    else:
        for t in tasks:
            name, report = _condition_task(t)
            results[name] = report
            if log is not None:
                log(f"condition {name} done")
    sweep = AblationSweep(
        seed=train_cfg.seed,
        conditions=results,
        model_config=asdict(model_cfg),
        train_config=asdict(train_cfg),
    )
    full_report = results["full"]
    for fam in families:
        per_id = sweep.family(fam)
        sweep.heatmaps[fam] = build_heatmap(full_report, per_id, fam)
    if out_dir is not None:
        write_sweep(sweep, out_dir)
    return sweep


def write_sweep(sweep: AblationSweep, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / ABLATION_REPORT_FILE).write_text(sweep.to_json())
    for kind, heatmap in sweep.heatmaps.items():
        (out_dir / HEATMAP_CSV[kind]).write_text(heatmap.to_csv())


def read_sweep(in_dir) -> AblationSweep:
    return AblationSweep.from_json((Path(in_dir) / ABLATION_REPORT_FILE).read_text())
