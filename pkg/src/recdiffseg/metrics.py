"""Confusion-matrix based segmentation metrics (IoU, mIoU, F1)."""

import json
from fractions import Fraction

import numpy as np

from .errors import ValidationError


class ConfusionMatrix:
    """``counts[i, j]`` = number of pixels with ground truth ``i`` predicted as ``j``."""

    def __init__(self, num_classes, counts=None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)

    def accumulate(self, predicted, truth):
        predicted = np.asarray(predicted)
        truth = np.asarray(truth)
        if predicted.shape != truth.shape:
            raise ValidationError(f"prediction {predicted.shape} and truth {truth.shape} differ")
        C = self.num_classes
        for name, arr in (("prediction", predicted), ("truth", truth)):
            if arr.size and (arr.min() < 0 or arr.max() >= C):
                raise ValidationError(f"{name} has class indices outside [0, {C})")
        flat = truth.astype(np.int64).ravel() * C + predicted.astype(np.int64).ravel()
        self.counts += np.bincount(flat, minlength=C * C).reshape(C, C)
        return self

    def __add__(self, other):
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def tp(self, i):
        return int(self.counts[i, i])

    def fp(self, i):
        return int(self.counts[:, i].sum() - self.counts[i, i])

    def fn(self, i):
        return int(self.counts[i, :].sum() - self.counts[i, i])

    def present(self, i):
        """False when class ``i`` occurs in neither truth nor prediction."""
        return self.tp(i) + self.fp(i) + self.fn(i) > 0

    def iou(self, i, exact=False):
        """TP / (TP + FP + FN); ``None`` when the class is absent everywhere."""
        denom = self.tp(i) + self.fp(i) + self.fn(i)
        if denom == 0:
            return None
        return Fraction(self.tp(i), denom) if exact else self.tp(i) / denom

    def f1(self, i, exact=False):
        denom = 2 * self.tp(i) + self.fp(i) + self.fn(i)
        if denom == 0:
            return None
        return Fraction(2 * self.tp(i), denom) if exact else 2 * self.tp(i) / denom

    def miou(self, exact=False):
        """Mean IoU over classes present in truth or prediction."""
        vals = [v for v in (self.iou(i, exact) for i in range(self.num_classes)) if v is not None]
        if not vals:
            return None
        return sum(vals, Fraction(0)) / len(vals) if exact else float(np.mean(vals))

    def mean_f1(self, exact=False):
        vals = [v for v in (self.f1(i, exact) for i in range(self.num_classes)) if v is not None]
        if not vals:
            return None
        return sum(vals, Fraction(0)) / len(vals) if exact else float(np.mean(vals))


def iou(cm, i):
    return cm.iou(i)


def miou(cm):
    return cm.miou()


def f1(cm, i):
    return cm.f1(i)


def evaluate(predictions, truths, num_classes):
    cm = ConfusionMatrix(num_classes)
    for p, t in zip(predictions, truths):
        cm.accumulate(p, t)
    return cm


def report_dict(cm, class_names=None):
    names = class_names or [f"class_{i}" for i in range(cm.num_classes)]
    out = {
        "iou": {n: cm.iou(i) for i, n in enumerate(names)},
        "f1": {n: cm.f1(i) for i, n in enumerate(names)},
        "miou": cm.miou(),
        "mean_f1": cm.mean_f1(),
        "excluded_classes": [n for i, n in enumerate(names) if not cm.present(i)],
        "pixels": cm.total,
    }
    if cm.num_classes == 2:
        # binary tasks report the foreground score alone
        out["foreground_f1"] = cm.f1(1)
    return out


def format_report(cm, class_names=None):
    names = class_names or [f"class_{i}" for i in range(cm.num_classes)]
    width = max(len("class"), *(len(n) for n in names))
    lines = [f"{'class':<{width}}  {'IoU':>7}  {'F1':>7}"]
    for i, n in enumerate(names):
        v, f = cm.iou(i), cm.f1(i)
        if v is None:
            lines.append(f"{n:<{width}}  {'absent':>7}  {'absent':>7}")
        else:
            lines.append(f"{n:<{width}}  {v:7.4f}  {f:7.4f}")
    m, mf = cm.miou(), cm.mean_f1()
    lines.append(f"{'mean':<{width}}  {m if m is not None else float('nan'):7.4f}  "
                 f"{mf if mf is not None else float('nan'):7.4f}")
    excluded = [n for i, n in enumerate(names) if not cm.present(i)]
    if excluded:
        lines.append("excluded from mean (absent): " + ", ".join(excluded))
    return "\n".join(lines) + "\n"


def write_report(cm, path_txt, path_json, class_names=None):
    with open(path_txt, "w") as fh:
        fh.write(format_report(cm, class_names))
    with open(path_json, "w") as fh:
        json.dump(report_dict(cm, class_names), fh, indent=2, sort_keys=True)
