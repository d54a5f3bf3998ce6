"""Detector-side primitives: bounding boxes, IoU overlap, linear margin
classifiers with hard-negative mining, proposal scoring, and greedy NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .linalg import ensure_feature_matrix

# Negatives scoring above -HINGE_MARGIN violate the margin and get mined.
HINGE_MARGIN = 1.0
# Size of the initial negative cache before any mining round.
INITIAL_NEG_CACHE = 1024


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates; max corner never below min."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise DataError("box coordinates must be finite")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise DataError(
                f"degenerate box ordering: ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Proposal:
    """Candidate window tied to one row of its image's feature matrix."""

    image_id: str
    box: BBox
    feature_row: int


@dataclass(frozen=True)
class GroundTruth:
    """Annotated object box."""

    image_id: str
    class_id: str
    box: BBox


@dataclass(frozen=True)
class Detection:
    """Scored, class-labeled box emitted by a detector."""

    image_id: str
    box: BBox
    class_id: str
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise DataError("detection score must be finite")


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when the union is empty."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass
class TrainConfig:
    """Hyperparameters of the linear margin classifier.

    ``reg_lambda`` weights the L2 penalty; training is deterministic
    full-batch subgradient descent with step 1/(reg_lambda * t) for
    ``iterations`` steps, repeated over at most ``max_hard_rounds`` rounds
    of hard-negative mining.
    """

    reg_lambda: float = 0.01
    iterations: int = 2000
    max_hard_rounds: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.reg_lambda) and self.reg_lambda > 0):
            raise DataError("reg_lambda must be positive")
        if self.iterations < 1:
            raise DataError("iterations must be >= 1")
        if self.max_hard_rounds < 1:
            raise DataError("max_hard_rounds must be >= 1")


@dataclass(eq=False)
class LinearDetector:
    """Linear scoring rule w . x + b for one class, tied to one frame.

    ``frame`` names the projection the training data lived in ("raw",
    "aligned:<class>", ...); scoring data from any other frame is a hard
    error.
    """

    class_id: str
    weights: np.ndarray
    bias: float
    frame: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.weights)) or not math.isfinite(self.bias):
            raise DataError("detector parameters must be finite")


def hinge_objective(w, b, X, y, reg_lambda: float) -> float:
    """L2-regularized mean hinge loss at (w, b)."""
    margins = y * (X @ w + b)
    hinge = np.maximum(0.0, HINGE_MARGIN - margins)
    return 0.5 * reg_lambda * float(w @ w) + float(hinge.mean())


def _subgradient_descent(X, y, cfg: TrainConfig) -> tuple[np.ndarray, float]:
    """Full-batch subgradient descent on the regularized hinge objective.

    Deterministic: fixed iteration count, step 1/(reg_lambda * t), start at
    zero.  The bias rides along as a constant feature so it shares the
    weight shrinkage; an unregularized bias is unstable under the 1/(l*t)
    schedule (the first step is huge).
    """
    n = X.shape[0]
    Xa = np.hstack([X, np.ones((n, 1))])
    w = np.zeros(Xa.shape[1])
    yX = y[:, None] * Xa
    for t in range(1, cfg.iterations + 1):
        eta = 1.0 / (cfg.reg_lambda * t)
        viol = y * (Xa @ w) < HINGE_MARGIN
        gw = cfg.reg_lambda * w
        if np.any(viol):
            gw = gw - yX[viol].sum(axis=0) / n
        w = w - eta * gw
    return w[:-1], float(w[-1])


def train_detector(
    pos,
    neg,
    cfg: TrainConfig,
    class_id: str = "",
    frame: str = "raw",
    record: list | None = None,
) -> LinearDetector:
    """Train a linear detector with hard-negative mining.

    Each round trains on the positives plus the current negative cache,
    scores the full negative pool, and adds margin violators (score above
    -1) to the cache; mining stops when a round adds nothing new or after
    ``cfg.max_hard_rounds`` rounds.

    ``record``, when given, receives one dict per round with the weights,
    bias and cache indices of that round (used by diagnostics and tests).
    """
    P = ensure_feature_matrix(pos, "pos")
    N = ensure_feature_matrix(neg, "neg")
    if P.shape[1] != N.shape[1]:
        raise DataError(
            f"positive dim {P.shape[1]} != negative dim {N.shape[1]}"
        )

    cache = np.arange(min(N.shape[0], INITIAL_NEG_CACHE))
    w, b = np.zeros(P.shape[1]), 0.0
    for _ in range(cfg.max_hard_rounds):
        X = np.vstack([P, N[cache]])
        y = np.concatenate([np.ones(P.shape[0]), -np.ones(cache.shape[0])])
        w, b = _subgradient_descent(X, y, cfg)
        if record is not None:
            record.append({"weights": w.copy(), "bias": b, "cache": cache.copy()})
        pool_scores = N @ w + b
        violators = np.flatnonzero(pool_scores > -HINGE_MARGIN)
        new = np.setdiff1d(violators, cache, assume_unique=False)
        if new.size == 0:
            break
        cache = np.union1d(cache, new)
    return LinearDetector(class_id=class_id, weights=w, bias=b, frame=frame)


def score_proposals(det: LinearDetector, X, frame: str) -> np.ndarray:
    """Raw margins w . x + b for every row of ``X``.

    ``frame`` must equal the detector's training frame; a mismatch means a
    projection step was skipped or used the wrong basis.
    """
    if frame != det.frame:
        raise DataError(
            f"detector for '{det.class_id}' expects frame '{det.frame}', "
            f"got '{frame}'"
        )
    A = ensure_feature_matrix(X)
    if A.shape[1] != det.weights.shape[0]:
        raise DataError(
            f"feature dim {A.shape[1]} != detector dim {det.weights.shape[0]}"
        )
    return A @ det.weights + det.bias


def _nms_key(d: Detection):
    # Full ordering: score desc, then image id, then box lexicographic.
    return (-d.score, d.image_id, d.box.as_tuple())


def greedy_nms(dets: list[Detection], overlap_thresh: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Repeatedly keeps the highest-scoring remaining detection and drops every
    remaining one whose IoU with it exceeds ``overlap_thresh``.  Ties break
    by image id, then box coordinates, so output order is reproducible.
    """
    if not 0.0 <= overlap_thresh <= 1.0:
        raise DataError("overlap threshold must be in [0, 1]")
    classes = {d.class_id for d in dets}
    if len(classes) > 1:
        raise DataError(f"NMS input mixes classes: {sorted(classes)}")
    remaining = sorted(dets, key=_nms_key)
    kept: list[Detection] = []
    while remaining:
        top = remaining.pop(0)
        kept.append(top)
        remaining = [r for r in remaining if iou(top.box, r.box) <= overlap_thresh]
    return kept
