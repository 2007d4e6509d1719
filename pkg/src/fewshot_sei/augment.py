"""Hybrid data augmentation: IQ-plane rotation and 1-D CutMix.

Rotation uses only the four quarter-turn angles, applied with exact
{-1, 0, 1} coefficients so rotated copies are bit-reproducible and the
per-sample modulus is preserved exactly. CutMix splices one contiguous
time window of a partner signal into a sample and mixes the labels by
the realized window fraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import SignalRecord
from .errors import LengthMismatch
from .losses import SoftLabel


class RotationAngle(Enum):
    """The four representable rotation angles (quarter turns)."""

    DEG_0 = 0
    DEG_90 = 1
    DEG_180 = 2
    DEG_270 = 3


ROTATION_ORDER = (
    RotationAngle.DEG_0,
    RotationAngle.DEG_90,
    RotationAngle.DEG_180,
    RotationAngle.DEG_270,
)


def rotate(record: SignalRecord, angle: RotationAngle) -> SignalRecord:
    """Rotate every (I, Q) sample point by the given quarter turn.

    Implemented as negations and row swaps rather than a matrix product,
    so results (including signed zeros) are exact.
    """
    i, q = record.iq[0], record.iq[1]
    if angle is RotationAngle.DEG_0:
        iq = record.iq.copy()
    elif angle is RotationAngle.DEG_90:
        iq = np.stack([-q, i])
    elif angle is RotationAngle.DEG_180:
        iq = np.stack([-i, -q])
    else:
        iq = np.stack([q, -i])
    return SignalRecord(iq=iq, label=record.label, emitter_id=record.emitter_id)


def expand_rotations(records) -> list:
    """All four rotations of every record, in fixed angle order.

    Record i of the input occupies output positions 4i .. 4i+3.
    """
    return [rotate(r, angle) for r in records for angle in ROTATION_ORDER]


@dataclass(frozen=True)
class CutMixPlan:
    """One contiguous replacement window and its label mixing ratio."""

    cut_start: int
    cut_len: int
    lambda_cm: float


def sample_cutmix_plan(rng: np.random.Generator, length: int) -> CutMixPlan:
    """Draw a window plan: mixing ratio from Beta(1, 1), placement uniform.

    lambda_cm is recomputed from the realized integer cut length so the
    label proportions match the sample proportions exactly.
    """
    if length < 1:
        raise LengthMismatch(f"signal length must be >= 1, got {length}")
    lam = float(rng.beta(1.0, 1.0))
    cut_len = int(round((1.0 - lam) * length))
    cut_len = min(max(cut_len, 0), length)
    hi = min(length - cut_len, length - 1)
    cut_start = int(rng.integers(0, hi + 1))
    return CutMixPlan(cut_start=cut_start, cut_len=cut_len, lambda_cm=1.0 - cut_len / length)


def apply_cutmix(
    x_a: SignalRecord,
    x_b: SignalRecord,
    y_a: int,
    y_b: int,
    plan: CutMixPlan,
    num_classes: int,
):
    """Splice plan's window of x_b into x_a; mix one-hot labels to match.

    Returns (mixed 2xL matrix, SoftLabel over num_classes). Columns are
    copied verbatim from one parent or the other.
    """
    length = x_a.iq.shape[1]
    if x_b.iq.shape[1] != length:
        raise LengthMismatch(
            f"cutmix parents have lengths {length} and {x_b.iq.shape[1]}"
        )
    if not (0 <= y_a < num_classes and 0 <= y_b < num_classes):
        raise ValueError(f"labels ({y_a}, {y_b}) out of range for {num_classes} classes")
    if plan.cut_start < 0 or plan.cut_start + plan.cut_len > length:
        raise LengthMismatch(
            f"plan window [{plan.cut_start}, {plan.cut_start + plan.cut_len}) "
            f"does not fit length {length}"
        )
    mixed = x_a.iq.copy()
    mixed[:, plan.cut_start : plan.cut_start + plan.cut_len] = x_b.iq[
        :, plan.cut_start : plan.cut_start + plan.cut_len
    ]
    weights = np.zeros(num_classes)
    weights[y_a] += plan.lambda_cm
    weights[y_b] += 1.0 - plan.lambda_cm
    return mixed, SoftLabel(weights)
