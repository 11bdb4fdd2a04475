"""CSV traces for solver runs and training runs (LF line endings, repr floats)."""

from __future__ import annotations

import csv
import io

from ..errors import InvalidArgumentError
from ..metrics import iou, mae
from ..solver import SolveResult

SOLVE_HEADER = ("stage", "data_energy", "sparsity_energy", "surrogate_before", "surrogate_after", "mae", "iou")
TRAIN_HEADER = ("step", "loss", "bce", "iou_loss", "dice", "mse")


def _num(v):
    return repr(float(v))


def solve_rows(result: SolveResult, gt=None, threshold=0.5):
    for state, t in zip(result.stages, result.trace):
        if gt is None:
            quality = ("", "")
        else:
            quality = (_num(mae(state.m, gt)), _num(iou((state.m >= threshold).astype(float), gt)))
        yield (str(t.stage), _num(t.data_energy), _num(t.sparsity_energy),
               _num(t.surrogate_before), _num(t.surrogate_after)) + quality


def train_rows(records):
    for r in records:
        yield (str(r.step), _num(r.loss), _num(r.bce), _num(r.iou_loss), _num(r.dice), _num(r.mse))


def render_trace(result, gt=None, threshold=0.5) -> str:
    """CSV text for a :class:`SolveResult` or a training trace (list of records / TrainResult)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if isinstance(result, SolveResult):
        writer.writerow(SOLVE_HEADER)
        writer.writerows(solve_rows(result, gt, threshold))
    else:
        records = getattr(result, "trace", result)
        if not isinstance(records, list):
            raise InvalidArgumentError("emit_trace needs a SolveResult or a training trace")
        writer.writerow(TRAIN_HEADER)
        writer.writerows(train_rows(records))
    return buf.getvalue()


def emit_trace(path, result, gt=None, threshold=0.5):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_trace(result, gt, threshold))
