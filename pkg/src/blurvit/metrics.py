"""Classification metrics, ROC curves, and evaluation reports.

Binary tasks report precision/recall/F1 for class index 1; multiclass
tasks report macro one-vs-rest averages.  Every report records which
averaging produced its headline numbers, and any zero-denominator
fallback is listed under "degenerate" instead of silently passing NaN
around.
"""

import json
from pathlib import Path

import numpy as np

__all__ = [
    "confusion_matrix",
    "scores",
    "roc_points",
    "auroc_binary",
    "auroc_macro",
    "evaluate",
    "write_report",
    "read_report",
    "compare_reports",
    "format_compare_table",
    "roc_csv",
    "roc_svg",
    "HEADLINE_METRICS",
]

HEADLINE_METRICS = ("accuracy", "precision", "recall", "f1", "auroc")


def confusion_matrix(y_true, y_pred, n_classes):
    """(C, C) counts, true class on rows, predicted class on columns."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be 1-d and the same length")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} has labels outside [0, {n_classes})")
    mat = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(mat, (y_true, y_pred), 1)
    return mat


def _per_class(mat, degenerate):
    n_classes = mat.shape[0]
    precision = np.zeros(n_classes)
    recall = np.zeros(n_classes)
    f1 = np.zeros(n_classes)
    for c in range(n_classes):
        tp = mat[c, c]
        fp = mat[:, c].sum() - tp
        fn = mat[c, :].sum() - tp
        if tp + fp:
            precision[c] = tp / (tp + fp)
        else:
            degenerate.append(f"precision[{c}]: no predicted positives, reported 0.0")
        if tp + fn:
            recall[c] = tp / (tp + fn)
        else:
            degenerate.append(f"recall[{c}]: no true positives, reported 0.0")
        if 2 * tp + fp + fn:
            f1[c] = 2 * tp / (2 * tp + fp + fn)
        else:
            degenerate.append(f"f1[{c}]: empty class, reported 0.0")
    return precision, recall, f1


def scores(y_true, y_pred, n_classes):
    """Accuracy plus precision/recall/F1 with explicit averaging.

    Headline precision/recall/f1 come from class 1 when n_classes == 2
    ("binary" averaging) and from the macro average otherwise.
    """
    mat = confusion_matrix(y_true, y_pred, n_classes)
    degenerate = []
    precision, recall, f1 = _per_class(mat, degenerate)
    n = mat.sum()
    out = {
        "accuracy": float(np.trace(mat) / n) if n else 0.0,
        "per_class": {
            "precision": precision.tolist(),
            "recall": recall.tolist(),
            "f1": f1.tolist(),
            "support": mat.sum(axis=1).tolist(),
        },
        "macro": {
            "precision": float(precision.mean()),
            "recall": float(recall.mean()),
            "f1": float(f1.mean()),
        },
        "confusion": mat.tolist(),
        "degenerate": degenerate,
    }
    if n_classes == 2:
        out["averaging"] = "binary"
        out["precision"] = float(precision[1])
        out["recall"] = float(recall[1])
        out["f1"] = float(f1[1])
    else:
        out["averaging"] = "macro"
        out["precision"] = out["macro"]["precision"]
        out["recall"] = out["macro"]["recall"]
        out["f1"] = out["macro"]["f1"]
    if not n:
        out["degenerate"].append("empty evaluation set")
    return out


def roc_points(y_true, y_score):
    """ROC curve of a binary problem, threshold swept high to low.

    Returns (fpr, tpr, thresholds); tied scores collapse into a single
    point and the curve starts at (0, 0) with threshold +inf.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_score = np.asarray(y_score, dtype=np.float64)
    if y_true.shape != y_score.shape or y_true.ndim != 1 or y_true.size == 0:
        raise ValueError("need matching non-empty 1-d labels and scores")
    order = np.argsort(-y_score, kind="stable")
    s = y_score[order]
    t = y_true[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(t)[last_of_group].astype(np.float64)
    fps = (last_of_group + 1) - tps
    n_pos, n_neg = tps[-1], fps[-1]
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative sample")
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[np.inf, s[last_of_group]]
    return fpr, tpr, thresholds


def _trapezoid(y, x):
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) * 0.5))


def auroc_binary(y_true, y_score):
    fpr, tpr, _ = roc_points(y_true, y_score)
    return _trapezoid(tpr, fpr)


def auroc_macro(y_true, y_prob, degenerate=None):
    """Mean one-vs-rest AUROC over classes where it is defined."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_prob = np.asarray(y_prob, dtype=np.float64)
    per_class = []
    for c in range(y_prob.shape[1]):
        member = (y_true == c).astype(np.int64)
        if member.all() or not member.any():
            if degenerate is not None:
                degenerate.append(f"auroc[{c}]: class absent from one side, skipped")
            continue
        per_class.append(auroc_binary(member, y_prob[:, c]))
    if not per_class:
        if degenerate is not None:
            degenerate.append("auroc: undefined for every class, reported 0.0")
        return 0.0
    return float(np.mean(per_class))


def evaluate(y_true, y_prob, class_names):
    """Full evaluation report from per-class probabilities (or scores).

    y_prob is (n, C); predictions are the argmax.  Returns a plain dict
    ready for JSON serialization.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_prob = np.asarray(y_prob, dtype=np.float64)
    if y_prob.ndim != 2 or y_prob.shape[0] != y_true.shape[0]:
        raise ValueError(f"y_prob must be (n, C), got {y_prob.shape} "
                         f"for {y_true.shape[0]} labels")
    n_classes = y_prob.shape[1]
    if len(class_names) != n_classes:
        raise ValueError(f"{len(class_names)} class names for {n_classes} columns")
    report = scores(y_true, y_prob.argmax(axis=1), n_classes)
    if n_classes == 2:
        if (y_true == 1).any() and (y_true == 0).any():
            fpr, tpr, _ = roc_points(y_true, y_prob[:, 1])
            report["auroc"] = _trapezoid(tpr, fpr)
            # overlay data, so comparisons can plot curves side by side
            report["roc"] = {"fpr": fpr.tolist(), "tpr": tpr.tolist()}
        else:
            report["auroc"] = 0.0
            report["degenerate"].append("auroc: single-class labels, reported 0.0")
        report["auroc_averaging"] = "binary"
    else:
        report["auroc"] = auroc_macro(y_true, y_prob, report["degenerate"])
        report["auroc_averaging"] = "macro"
    report["format"] = "blurvit-eval/1"
    report["n_samples"] = int(y_true.size)
    report["classes"] = list(class_names)
    return report


def write_report(path, report):
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")


def read_report(path):
    report = json.loads(Path(path).read_text())
    if report.get("format") != "blurvit-eval/1":
        raise ValueError(f"{path} is not an evaluation report")
    return report


def compare_reports(named_reports):
    """Side-by-side headline metrics for a list of (name, report) pairs.

    Deltas are relative to the last entry, so call it with the baseline
    in final position.  Reports that record the hash of their test data
    must all agree on it; comparing scores from different test sets is
    refused.
    """
    if len(named_reports) < 2:
        raise ValueError("need at least two reports to compare")
    hashes = {r["data_hash"] for _, r in named_reports if "data_hash" in r}
    if len(hashes) > 1:
        raise ValueError("reports were evaluated on different test sets")
    runs = []
    for name, report in named_reports:
        run = {"name": name, "metrics": {m: report[m] for m in HEADLINE_METRICS}}
        if "roc" in report:
            run["roc"] = report["roc"]
        runs.append(run)
    baseline = runs[-1]["metrics"]
    for run in runs:
        run["delta_vs_baseline"] = {
            m: f"{run['metrics'][m] - baseline[m]:+.4f}" for m in HEADLINE_METRICS}
    return {"format": "blurvit-compare/1", "baseline": runs[-1]["name"], "runs": runs}


def format_compare_table(comparison):
    """Render a comparison as a fixed-width text table."""
    header = ["run"] + [m.upper() if m in ("f1", "auroc") else m.capitalize()
                        for m in HEADLINE_METRICS] + ["dAccuracy"]
    rows = [header]
    for run in comparison["runs"]:
        rows.append([run["name"]]
                    + [f"{run['metrics'][m]:.4f}" for m in HEADLINE_METRICS]
                    + [run["delta_vs_baseline"]["accuracy"]])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for r, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if r == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(header))))
    return "\n".join(lines)


def roc_csv(path, fpr, tpr, thresholds):
    lines = ["threshold,fpr,tpr"]
    for th, x, y in zip(thresholds, fpr, tpr):
        lines.append(f"{'inf' if np.isinf(th) else repr(float(th))},"
                     f"{repr(float(x))},{repr(float(y))}")
    Path(path).write_text("\n".join(lines) + "\n")


def roc_svg(path, fpr, tpr):
    """Tiny standalone SVG of the ROC curve; output bytes are a pure
    function of the points."""
    width, height, margin = 640, 480, 40
    def sx(x):
        return margin + x * (width - 2 * margin)
    def sy(y):
        return height - margin - y * (height - 2 * margin)
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(fpr, tpr))
    diag = f"{sx(0):.2f},{sy(0):.2f} {sx(1):.2f},{sy(1):.2f}"
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}"'
        f' height="{height - 2 * margin}" fill="none" stroke="#888"/>\n'
        f'<polyline points="{diag}" fill="none" stroke="#bbb" stroke-dasharray="4 4"/>\n'
        f'<polyline points="{pts}" fill="none" stroke="#1c6ed0" stroke-width="2"/>\n'
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle"'
        f' font-size="14">false positive rate</text>\n'
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="14"'
        f' transform="rotate(-90 14 {height / 2:.0f})">true positive rate</text>\n'
        f'</svg>\n'
    )
    Path(path).write_text(svg)
