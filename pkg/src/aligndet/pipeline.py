"""End-to-end adaptation: initial source training, positive mining in both
domains, per-class (or global) subspace alignment, retraining in the aligned
frame, and adapted detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .alignment import (
    AlignedBasis,
    AlignmentMap,
    aligned_source_basis,
    project_for_testing,
    project_for_training,
    solve_alignment,
)
from .datasets import Dataset, ImageRecord
from .detection import (
    Detection,
    LinearDetector,
    TrainConfig,
    greedy_nms,
    iou,
    score_proposals,
    train_detector,
)
from .errors import DataError, NumericalError
from .linalg import Subspace, normalize, pca

MODES = ("class-specific", "full-image", "none")
FULL_IMAGE_FRAME = "aligned:__full__"


@dataclass
class AdaptationConfig:
    """Thresholds and knobs of the adaptation pipeline.

    ``gamma`` is the IoU threshold for mining source positives, ``sigma``
    the raw-score threshold for mining target positives, ``d`` the subspace
    dimension shared by both domains.  ``detect_thresh`` filters detection
    scores and is deliberately separate from the mining threshold sigma.
    """

    gamma: float = 0.7
    sigma: float = 0.4
    d: int = 100
    mode: str = "class-specific"
    nms_thresh: float = 0.3
    neg_lambda: float = 0.3
    detect_thresh: float = 0.0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise DataError(f"gamma must be in (0, 1], got {self.gamma}")
        if not math.isfinite(self.sigma):
            raise DataError("sigma must be finite")
        if self.d < 1:
            raise DataError("d must be >= 1")
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}, got '{self.mode}'")
        if not (0.0 <= self.nms_thresh <= 1.0):
            raise DataError("nms_thresh must be in [0, 1]")
        if not (0.0 <= self.neg_lambda < 1.0):
            raise DataError("neg_lambda must be in [0, 1)")
        if not math.isfinite(self.detect_thresh):
            raise DataError("detect_thresh must be finite")


@dataclass(eq=False)
class ClassAdaptationState:
    """Everything adaptation produced for one class.

    Downgraded classes (too few mined samples or rank failure) keep the
    initial raw-frame detector and carry no subspaces.
    """

    class_id: str
    mode: str
    adapted_detector: LinearDetector
    source_subspace: Subspace | None = None
    target_subspace: Subspace | None = None
    map: AlignmentMap | None = None
    aligned_basis: AlignedBasis | None = None
    n_pos_src: int = 0
    n_pos_tgt: int = 0
    downgraded: bool = False
    note: str = ""

    def __post_init__(self):
        if self.map is not None:
            if self.source_subspace is None or self.target_subspace is None:
                raise DataError("alignment map present without its subspaces")
            if self.source_subspace.d != self.target_subspace.d:
                raise DataError("state subspaces disagree on d")
            expected = (self.source_subspace.label, self.target_subspace.label)
            if self.map.provenance != expected:
                raise DataError(
                    f"map provenance {self.map.provenance} does not match "
                    f"state subspaces {expected}"
                )


def _class_max_overlaps(img: ImageRecord, class_id: str) -> np.ndarray:
    """Per-proposal max IoU against this image's same-class GT boxes."""
    gt_boxes = [box for cid, box in (img.gt or []) if cid == class_id]
    out = np.zeros(img.n_proposals)
    for i, box in enumerate(img.boxes):
        for g in gt_boxes:
            ov = iou(box, g)
            if ov > out[i]:
                out[i] = ov
    return out


def _require_labeled(dataset: Dataset) -> None:
    if not dataset.labeled:
        raise DataError(f"dataset '{dataset.name}' has images without ground truth")


def mine_source_positives(source: Dataset, class_id: str, gamma: float) -> np.ndarray:
    """Features of all source proposals overlapping a same-class GT box.

    Ground-truth boxes enter only through proposals that overlap them with
    IoU >= gamma; they are never injected directly.
    """
    if not (0.0 < gamma <= 1.0):
        raise DataError(f"gamma must be in (0, 1], got {gamma}")
    if class_id not in source.classes:
        raise DataError(f"unknown class '{class_id}'")
    _require_labeled(source)
    rows = []
    for img in source.images:
        keep = _class_max_overlaps(img, class_id) >= gamma
        if np.any(keep):
            rows.append(img.features[keep])
    if not rows:
        raise DataError(
            f"no source positives for class '{class_id}' at gamma={gamma}"
        )
    return np.vstack(rows)


def _mine_source_negatives(
    source: Dataset, class_id: str, neg_lambda: float
) -> np.ndarray:
    """Features of proposals whose max same-class overlap stays below lambda."""
    rows = []
    for img in source.images:
        keep = _class_max_overlaps(img, class_id) < neg_lambda
        if np.any(keep):
            rows.append(img.features[keep])
    if not rows:
        raise DataError(
            f"no source negatives for class '{class_id}' at lambda={neg_lambda}"
        )
    return np.vstack(rows)


def mine_target_positives(
    target: Dataset, init_detector: LinearDetector, sigma: float
) -> np.ndarray:
    """Features of all target proposals the initial detector scores >= sigma.

    NMS is deliberately not applied here so the sample count feeding the
    target subspace stays consistent.
    """
    if init_detector.frame != "raw":
        raise DataError(
            f"target mining needs a raw-frame detector, got '{init_detector.frame}'"
        )
    rows = []
    for img in target.images:
        scores = score_proposals(init_detector, img.features, frame="raw")
        keep = scores >= sigma
        if np.any(keep):
            rows.append(img.features[keep])
    if not rows:
        raise DataError(
            f"no target positives for class '{init_detector.class_id}' "
            f"at sigma={sigma}"
        )
    return np.vstack(rows)


def train_initial_detectors(
    source: Dataset,
    cfg: AdaptationConfig,
    warnings: list[str] | None = None,
) -> dict[str, LinearDetector]:
    """One raw-frame detector per class from the labeled source set.

    Positives are proposals with IoU >= gamma to a same-class GT box,
    negatives proposals with max IoU < neg_lambda; proposals in between are
    excluded.  Classes without positives are skipped with a warning record.
    """
    _require_labeled(source)
    detectors: dict[str, LinearDetector] = {}
    for class_id in source.classes:
        try:
            pos = mine_source_positives(source, class_id, cfg.gamma)
        except DataError as exc:
            if warnings is not None:
                warnings.append(f"initial-training: {exc}; class skipped")
            continue
        neg = _mine_source_negatives(source, class_id, cfg.neg_lambda)
        detectors[class_id] = train_detector(
            pos, neg, cfg.train, class_id=class_id, frame="raw"
        )
    return detectors


def _fit_subspace(X_raw: np.ndarray, d: int, label: str) -> Subspace:
    """Normalize within-domain, then PCA; stats travel with the subspace."""
    Xn, stats = normalize(X_raw)
    return pca(Xn, d, stats=stats, label=label)


def _passthrough_state(
    class_id: str,
    detector: LinearDetector,
    n_src: int = 0,
    n_tgt: int = 0,
    downgraded: bool = False,
    note: str = "",
) -> ClassAdaptationState:
    return ClassAdaptationState(
        class_id=class_id,
        mode="none",
        adapted_detector=detector,
        n_pos_src=n_src,
        n_pos_tgt=n_tgt,
        downgraded=downgraded,
        note=note,
    )


def _adapt_class_specific(
    source: Dataset,
    target: Dataset,
    cfg: AdaptationConfig,
    init: dict[str, LinearDetector],
    warnings: list[str],
) -> dict[str, ClassAdaptationState]:
    states: dict[str, ClassAdaptationState] = {}
    for class_id, det in init.items():
        pos_src = mine_source_positives(source, class_id, cfg.gamma)
        n_src = pos_src.shape[0]
        try:
            pos_tgt = mine_target_positives(target, det, cfg.sigma)
        except DataError as exc:
            warnings.append(f"adapt: {exc}; class downgraded")
            states[class_id] = _passthrough_state(
                class_id, det, n_src, 0, downgraded=True, note=str(exc)
            )
            continue
        n_tgt = pos_tgt.shape[0]

        # A d-dimensional subspace needs at least d+1 samples.
        if n_src < cfg.d + 1 or n_tgt < cfg.d + 1:
            note = (
                f"mined counts src={n_src}, tgt={n_tgt} below d+1={cfg.d + 1}"
            )
            warnings.append(f"adapt: class '{class_id}': {note}; downgraded")
            states[class_id] = _passthrough_state(
                class_id, det, n_src, n_tgt, downgraded=True, note=note
            )
            continue
        try:
            S = _fit_subspace(pos_src, cfg.d, f"src:{class_id}")
            T = _fit_subspace(pos_tgt, cfg.d, f"tgt:{class_id}")
        except NumericalError as exc:
            warnings.append(f"adapt: class '{class_id}': {exc}; downgraded")
            states[class_id] = _passthrough_state(
                class_id, det, n_src, n_tgt, downgraded=True, note=str(exc)
            )
            continue

        M = solve_alignment(S, T)
        Xa = aligned_source_basis(S, M)
        frame = f"aligned:{class_id}"
        neg_src = _mine_source_negatives(source, class_id, cfg.neg_lambda)
        pos_proj = project_for_training(normalize(pos_src, S.stats)[0], S, Xa)
        neg_proj = project_for_training(normalize(neg_src, S.stats)[0], S, Xa)
        adapted = train_detector(
            pos_proj, neg_proj, cfg.train, class_id=class_id, frame=frame
        )
        states[class_id] = ClassAdaptationState(
            class_id=class_id,
            mode="class-specific",
            adapted_detector=adapted,
            source_subspace=S,
            target_subspace=T,
            map=M,
            aligned_basis=Xa,
            n_pos_src=n_src,
            n_pos_tgt=n_tgt,
        )
    return states


def _adapt_full_image(
    source: Dataset,
    target: Dataset,
    cfg: AdaptationConfig,
    init: dict[str, LinearDetector],
    warnings: list[str],
) -> dict[str, ClassAdaptationState]:
    src_all = source.all_features()
    tgt_all = target.all_features()
    n_src, n_tgt = src_all.shape[0], tgt_all.shape[0]
    if n_src < cfg.d + 1 or n_tgt < cfg.d + 1:
        warnings.append(
            f"adapt: full-image pool too small for d={cfg.d}; "
            "all classes pass through"
        )
        return {
            c: _passthrough_state(c, det, downgraded=True, note="global pool too small")
            for c, det in init.items()
        }
    try:
        S = _fit_subspace(src_all, cfg.d, "src:__full__")
        T = _fit_subspace(tgt_all, cfg.d, "tgt:__full__")
    except NumericalError as exc:
        warnings.append(f"adapt: full-image subspace failed ({exc}); pass-through")
        return {
            c: _passthrough_state(c, det, downgraded=True, note=str(exc))
            for c, det in init.items()
        }
    M = solve_alignment(S, T)
    Xa = aligned_source_basis(S, M)

    states: dict[str, ClassAdaptationState] = {}
    for class_id, det in init.items():
        pos_src = mine_source_positives(source, class_id, cfg.gamma)
        neg_src = _mine_source_negatives(source, class_id, cfg.neg_lambda)
        pos_proj = project_for_training(normalize(pos_src, S.stats)[0], S, Xa)
        neg_proj = project_for_training(normalize(neg_src, S.stats)[0], S, Xa)
        adapted = train_detector(
            pos_proj, neg_proj, cfg.train, class_id=class_id, frame=FULL_IMAGE_FRAME
        )
        states[class_id] = ClassAdaptationState(
            class_id=class_id,
            mode="full-image",
            adapted_detector=adapted,
            source_subspace=S,
            target_subspace=T,
            map=M,
            aligned_basis=Xa,
            n_pos_src=pos_src.shape[0],
            n_pos_tgt=0,
        )
    return states


def passthrough_states(
    detectors: dict[str, LinearDetector],
) -> dict[str, ClassAdaptationState]:
    """Wrap raw-frame detectors as unadapted per-class states."""
    return {c: _passthrough_state(c, det) for c, det in detectors.items()}


def adapt(
    source: Dataset,
    target: Dataset,
    cfg: AdaptationConfig,
    init_detectors: dict[str, LinearDetector] | None = None,
    warnings: list[str] | None = None,
) -> dict[str, ClassAdaptationState]:
    """Run subspace-alignment adaptation from ``source`` to ``target``.

    Returns one :class:`ClassAdaptationState` per class that produced an
    initial detector.  Per-class failures (empty mining, rank trouble)
    downgrade that class to a pass-through of its initial detector instead
    of aborting the run.
    """
    if source.feature_dim != target.feature_dim:
        raise DataError(
            f"feature dims differ: source {source.feature_dim}, "
            f"target {target.feature_dim}"
        )
    if cfg.mode != "none" and cfg.d > source.feature_dim:
        raise DataError(
            f"subspace dimension d={cfg.d} exceeds the feature dimension "
            f"{source.feature_dim}; no class can form a subspace"
        )
    warnings = warnings if warnings is not None else []
    init = init_detectors or train_initial_detectors(source, cfg, warnings)
    if cfg.mode == "none":
        return {c: _passthrough_state(c, det) for c, det in init.items()}
    if cfg.mode == "full-image":
        return _adapt_full_image(source, target, cfg, init, warnings)
    return _adapt_class_specific(source, target, cfg, init, warnings)


def detect(
    target: Dataset,
    states: dict[str, ClassAdaptationState],
    cfg: AdaptationConfig,
) -> list[Detection]:
    """Adapted detection over the target set.

    Per class: target features are normalized with the class's target stats
    and projected on the target basis (pass-through classes score raw
    features), thresholded at ``cfg.detect_thresh``, then NMS runs per image.
    Output order is class, then image, then NMS keep order.
    """
    out: list[Detection] = []
    for class_id in target.classes:
        state = states.get(class_id)
        if state is None:
            continue
        det = state.adapted_detector
        for img in target.images:
            if state.mode == "none":
                feats = img.features
                frame = "raw"
            else:
                normalized, _ = normalize(img.features, state.target_subspace.stats)
                feats = project_for_testing(normalized, state.target_subspace)
                frame = det.frame
            scores = score_proposals(det, feats, frame=frame)
            picked = [
                Detection(
                    image_id=img.image_id,
                    box=img.boxes[k],
                    class_id=class_id,
                    score=float(scores[k]),
                )
                for k in np.flatnonzero(scores >= cfg.detect_thresh)
            ]
            out.extend(greedy_nms(picked, cfg.nms_thresh))
    return out
