"""Leave-one-block-out evaluation across stimulation durations.

For every duration and fold, a global model is trained on the pooled training
blocks of all subjects (stage 1 is re-run per fold so the test block never
leaks into it), fine-tuned per subject, and scored on the held-out block.
Per-subject accuracy is the mean over folds; the subject's ITR applies the
gaze-shift overhead to the selection time.  Report rows aggregate mean and
standard error over subjects.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .dataset import (extract_epochs, filter_blocks, merge_trialsets,
                      plan_leave_one_block_out, select_channels)
from .filterbank import FilterBankSpec, subband_stacks
from .network import NetworkConfig, forward
from .training import StageConfig, derive_seed, two_stage_train


def itr_bits_per_min(P: float, M: int, T_total_s: float) -> float:
    """Information transfer rate of an M-way selection with accuracy P.

    Uses the convention 0*log(0) = 0 at both limits, so chance accuracy gives
    exactly zero and P = 1 gives log2(M) * 60 / T.
    """
    if not 0.0 <= P <= 1.0:
        raise ValueError(f"accuracy {P} outside [0, 1]")
    if M < 2:
        raise ValueError("ITR needs at least two classes")
    if T_total_s <= 0:
        raise ValueError("selection time must be positive")
    bits = math.log2(M)
    if P == 1.0:
        per_selection = bits
    elif P == 0.0:
        per_selection = bits + math.log2(1.0 / (M - 1))
    else:
        per_selection = bits + P * math.log2(P) + (1.0 - P) * math.log2((1.0 - P) / (M - 1))
    return per_selection * 60.0 / T_total_s


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError("predictions and labels must be equal-length vectors")
    if len(preds) == 0:
        raise ValueError("cannot score an empty prediction list")
    return float(np.mean(preds == labels))


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray   # (M, M) int64, rows = true class

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion matrix must be square")
        if (c < 0).any():
            raise ValueError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", c)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def diagonal_accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())


def confusion(preds, labels, M: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    if len(preds) and (preds.min() < 0 or preds.max() >= M or labels.min() < 0 or labels.max() >= M):
        raise ValueError("class index out of range")
    counts = np.zeros((M, M), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class SubjectResult:
    subject_id: str
    fold_accuracies: tuple       # fine-tuned model, one per fold
    global_fold_accuracies: tuple
    accuracy: float              # mean over folds
    global_accuracy: float
    itr: float


@dataclass(frozen=True)
class DurationResult:
    duration_s: float
    mean_accuracy: float
    accuracy_se: float
    mean_itr: float
    itr_se: float
    confusion: ConfusionMatrix
    subjects: tuple              # SubjectResult, ordered by subject id


@dataclass(frozen=True)
class EvalReport:
    gaze_shift_s: float
    n_classes: int
    rows: tuple                  # DurationResult per duration


def _standard_error(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def _prepare_subject(archive, duration, channels, bank):
    trials = extract_epochs(archive, duration)
    if channels is not None:
        trials = select_channels(trials, channels, archive.meta)
    stacks = subband_stacks(trials.epochs, bank, archive.meta.sampling_rate_hz)
    return trials, stacks


def _run_fold(task):
    """Train one (duration, fold) and score every subject's held-out block."""
    (duration, fold, subjects, prepared, stage1, stage2, config) = task
    train_parts = []
    per_subject = {}
    tests = {}
    for sid in subjects:
        trials, stacks = prepared[sid]
        keep = np.isin(trials.block_indices, fold.train_blocks)
        train_set = filter_blocks(trials, fold.train_blocks)
        per_subject[sid] = (train_set, stacks[keep])
        train_parts.append((train_set, stacks[keep]))
        test_mask = trials.block_indices == fold.test_block
        tests[sid] = (stacks[test_mask], trials.labels[test_mask])
    global_trials = merge_trialsets([p[0] for p in train_parts])
    global_stacks = np.concatenate([p[1] for p in train_parts], axis=0)
    s1 = replace(stage1, seed=derive_seed(stage1.seed, "stage1", duration, fold.test_block))
    s2 = replace(stage2, seed=derive_seed(stage2.seed, "stage2", duration, fold.test_block))
    global_params, fine = two_stage_train(global_trials, global_stacks,
                                          per_subject, s1, s2, config)
    out = {}
    for sid in subjects:
        stacks, labels = tests[sid]
        fine_preds = np.argmax(forward(fine[sid], stacks).softmax, axis=1)
        glob_preds = np.argmax(forward(global_params, stacks).softmax, axis=1)
        out[sid] = (fine_preds, glob_preds, labels)
    return duration, fold.test_block, out


def run_protocol(archives, durations, channels, bank: FilterBankSpec,
                 stage1: StageConfig, stage2: StageConfig, gaze_shift_s: float,
                 n_jobs: int = 1) -> EvalReport:
    """Full leave-one-block-out sweep over stimulation durations."""
    archives = list(archives)
    if not archives:
        raise ValueError("need at least one archive")
    first = archives[0].meta
    for a in archives:
        m = a.meta
        if (m.n_targets, m.sampling_rate_hz, m.channel_names, m.n_blocks) != (
                first.n_targets, first.sampling_rate_hz, first.channel_names, first.n_blocks):
            raise ValueError("archives disagree on targets, rate, channels or blocks")
    subjects = [a.meta.subject_id for a in archives]
    if len(set(subjects)) != len(subjects):
        raise ValueError("duplicate subject ids across archives")
    subjects = sorted(subjects)
    by_id = {a.meta.subject_id: a for a in archives}
    plan = plan_leave_one_block_out(first.n_blocks)
    M = first.n_targets

    tasks = []
    for duration in durations:
        prepared = {sid: _prepare_subject(by_id[sid], duration, channels, bank)
                    for sid in subjects}
        n = prepared[subjects[0]][0].n_epoch_samples
        c = prepared[subjects[0]][0].n_channels
        config = NetworkConfig(n_channels=c, n_samples=n,
                               n_subbands=bank.n_subbands, n_classes=M)
        for fold in plan:
            tasks.append((duration, fold, subjects, prepared, stage1, stage2, config))

    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    dur_order = {float(d): i for i, d in enumerate(durations)}
    results.sort(key=lambda r: (dur_order[float(r[0])], r[1]))

    rows = []
    for duration in durations:
        fold_outputs = [r[2] for r in results if r[0] == duration]
        pooled = ConfusionMatrix(np.zeros((M, M), dtype=np.int64))
        subject_rows = []
        for sid in subjects:
            fine_accs, glob_accs = [], []
            for out in fold_outputs:
                fine_preds, glob_preds, labels = out[sid]
                fine_accs.append(accuracy(fine_preds, labels))
                glob_accs.append(accuracy(glob_preds, labels))
                pooled = pooled + confusion(fine_preds, labels, M)
            acc = float(np.mean(fine_accs))
            subject_rows.append(SubjectResult(
                subject_id=sid,
                fold_accuracies=tuple(fine_accs),
                global_fold_accuracies=tuple(glob_accs),
                accuracy=acc,
                global_accuracy=float(np.mean(glob_accs)),
                itr=itr_bits_per_min(acc, M, duration + gaze_shift_s),
            ))
        accs = [s.accuracy for s in subject_rows]
        itrs = [s.itr for s in subject_rows]
        rows.append(DurationResult(
            duration_s=float(duration),
            mean_accuracy=float(np.mean(accs)),
            accuracy_se=_standard_error(accs),
            mean_itr=float(np.mean(itrs)),
            itr_se=_standard_error(itrs),
            confusion=pooled,
            subjects=tuple(subject_rows),
        ))
    return EvalReport(gaze_shift_s=float(gaze_shift_s), n_classes=M, rows=tuple(rows))


# ---------------------------------------------------------------------------
# report emission

def report_to_csv(report: EvalReport) -> str:
    lines = ["duration_s,mean_acc,acc_se,mean_itr,itr_se"]
    for row in report.rows:
        lines.append(f"{row.duration_s!r},{row.mean_accuracy!r},{row.accuracy_se!r},"
                     f"{row.mean_itr!r},{row.itr_se!r}")
    return "\n".join(lines) + "\n"


def confusion_to_csv(matrix: ConfusionMatrix) -> str:
    """Plain M x M count matrix, row = true class, column = predicted."""
    return "\n".join(",".join(str(v) for v in row) for row in matrix.counts) + "\n"


def report_to_json(report: EvalReport) -> str:
    payload = {
        "gaze_shift_s": report.gaze_shift_s,
        "n_classes": report.n_classes,
        "durations": [
            {
                "duration_s": row.duration_s,
                "mean_acc": row.mean_accuracy,
                "acc_se": row.accuracy_se,
                "mean_itr": row.mean_itr,
                "itr_se": row.itr_se,
                "confusion": row.confusion.counts.tolist(),
                "subjects": [
                    {
                        "subject_id": s.subject_id,
                        "fold_accuracies": list(s.fold_accuracies),
                        "global_fold_accuracies": list(s.global_fold_accuracies),
                        "accuracy": s.accuracy,
                        "global_accuracy": s.global_accuracy,
                        "itr": s.itr,
                    }
                    for s in row.subjects
                ],
            }
            for row in report.rows
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def format_mean_se_table(row_labels, col_labels, cells) -> str:
    """Accuracy-table CSV with mean±SE percent cells, two decimals.

    cells[row_label][col_label] = (mean_fraction, se_fraction); missing cells
    render empty.
    """
    lines = ["," + ",".join(col_labels)]
    for rl in row_labels:
        rendered = []
        for cl in col_labels:
            entry = cells.get(rl, {}).get(cl)
            if entry is None:
                rendered.append("")
            else:
                mean, se = entry
                rendered.append(f"{100.0 * mean:.2f}±{100.0 * se:.2f}")
        lines.append(rl + "," + ",".join(rendered))
    return "\n".join(lines) + "\n"
