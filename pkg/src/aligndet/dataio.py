"""Dataset persistence (binary feature files, CSV boxes, JSON manifests),
the synthetic domain-shift generator, run configuration, and bundle
serialization for detectors and adaptation states."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .alignment import AlignedBasis, AlignmentMap
from .datasets import Dataset, ImageRecord
from .detection import BBox, Detection, LinearDetector, TrainConfig
from .errors import DataError
from .linalg import NormalizationStats, Subspace
from .pipeline import AdaptationConfig, ClassAdaptationState

FEATURE_MAGIC = b"FMX1"
FEATURE_VERSION = 1

BOX_HEADER = "image_id,x_min,y_min,x_max,y_max"
GT_HEADER = BOX_HEADER + ",class"
DETECTION_HEADER = BOX_HEADER + ",class,score"


# ---------------------------------------------------------------------------
# Feature files: 16-byte header (magic, version, rows, cols), then
# little-endian float32, row-major.
# ---------------------------------------------------------------------------

def write_features(path, X) -> None:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("feature matrix must be 2-dimensional")
    n, D = X.shape
    payload = X.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, n, D))
        fh.write(payload)


def read_features(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature file '{path}' does not exist")
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != FEATURE_MAGIC:
        raise DataError(f"feature file '{path}' has a bad header")
    version, n, D = struct.unpack("<III", raw[4:16])
    if version != FEATURE_VERSION:
        raise DataError(f"feature file '{path}' has unsupported version {version}")
    expected = 16 + 4 * n * D
    if len(raw) != expected:
        raise DataError(
            f"feature file '{path}' truncated: {len(raw)} bytes, expected {expected}"
        )
    X = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, D).astype(np.float64)
    bad = ~np.isfinite(X)
    if np.any(bad):
        row = int(np.argwhere(bad)[0][0])
        raise DataError(f"feature file '{path}' has a non-finite value at row {row}")
    return X


# ---------------------------------------------------------------------------
# CSV box files (fixed header; floats serialized with repr round-tripping)
# ---------------------------------------------------------------------------

def _fmt_float(v: float) -> str:
    return repr(float(v))


def _parse_float(token: str, path, lineno: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise DataError(f"{path}:{lineno}: '{token}' is not a number") from None
    if not math.isfinite(v):
        raise DataError(f"{path}:{lineno}: non-finite value")
    return v


def write_boxes_csv(path, image_id: str, boxes: list[BBox]) -> None:
    lines = [BOX_HEADER]
    for b in boxes:
        lines.append(
            f"{image_id},{_fmt_float(b.x_min)},{_fmt_float(b.y_min)},"
            f"{_fmt_float(b.x_max)},{_fmt_float(b.y_max)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_boxes_csv(path) -> list[tuple[str, BBox]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"boxes file '{path}' does not exist")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != BOX_HEADER:
        raise DataError(f"boxes file '{path}' must start with '{BOX_HEADER}'")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 columns, got {len(parts)}")
        vals = [_parse_float(p, path, lineno) for p in parts[1:]]
        out.append((parts[0], BBox(*vals)))
    return out


def write_gt_csv(path, image_id: str, gt: list[tuple[str, BBox]]) -> None:
    lines = [GT_HEADER]
    for class_id, b in gt:
        lines.append(
            f"{image_id},{_fmt_float(b.x_min)},{_fmt_float(b.y_min)},"
            f"{_fmt_float(b.x_max)},{_fmt_float(b.y_max)},{class_id}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_gt_csv(path) -> list[tuple[str, str, BBox]]:
    """Rows of (image_id, class_id, box)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"gt file '{path}' does not exist")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != GT_HEADER:
        raise DataError(f"gt file '{path}' must start with '{GT_HEADER}'")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
        vals = [_parse_float(p, path, lineno) for p in parts[1:5]]
        out.append((parts[0], parts[5], BBox(*vals)))
    return out


def write_detections_csv(path, dets: list[Detection]) -> None:
    lines = [DETECTION_HEADER]
    for d in dets:
        b = d.box
        lines.append(
            f"{d.image_id},{_fmt_float(b.x_min)},{_fmt_float(b.y_min)},"
            f"{_fmt_float(b.x_max)},{_fmt_float(b.y_max)},{d.class_id},"
            f"{_fmt_float(d.score)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_detections_csv(path) -> list[Detection]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"detections file '{path}' does not exist")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != DETECTION_HEADER:
        raise DataError(f"detections file '{path}' must start with '{DETECTION_HEADER}'")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise DataError(f"{path}:{lineno}: expected 7 columns, got {len(parts)}")
        vals = [_parse_float(p, path, lineno) for p in parts[1:5]]
        score = _parse_float(parts[6], path, lineno)
        out.append(
            Detection(image_id=parts[0], box=BBox(*vals), class_id=parts[5], score=score)
        )
    return out


# ---------------------------------------------------------------------------
# Manifest + dataset round trips
# ---------------------------------------------------------------------------

def canonical_json(obj) -> str:
    """Stable JSON serialization: sorted keys, two-space indent, newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write manifest plus per-image feature/box/gt files; returns manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "boxes").mkdir(exist_ok=True)
    entries = []
    any_gt = any(img.gt is not None for img in dataset.images)
    if any_gt:
        (out_dir / "gt").mkdir(exist_ok=True)
    for img in dataset.images:
        feat_rel = f"features/{img.image_id}.fmx"
        boxes_rel = f"boxes/{img.image_id}.csv"
        write_features(out_dir / feat_rel, img.features)
        write_boxes_csv(out_dir / boxes_rel, img.image_id, img.boxes)
        entry = {
            "image_id": img.image_id,
            "feature_file": feat_rel,
            "boxes_file": boxes_rel,
        }
        if img.gt is not None:
            gt_rel = f"gt/{img.image_id}.csv"
            write_gt_csv(out_dir / gt_rel, img.image_id, img.gt)
            entry["gt_file"] = gt_rel
        entries.append(entry)
    manifest = {
        "name": dataset.name,
        "classes": list(dataset.classes),
        "feature_dim": dataset.feature_dim,
        "images": entries,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(canonical_json(manifest))
    return manifest_path


def load_dataset(manifest_path) -> Dataset:
    """Load and eagerly validate a dataset; every violation names its file."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"manifest '{manifest_path}' does not exist")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest '{manifest_path}' is not valid JSON: {exc}") from None
    for key in ("name", "classes", "feature_dim", "images"):
        if key not in manifest:
            raise DataError(f"manifest '{manifest_path}' missing key '{key}'")
    base = manifest_path.parent
    classes = list(manifest["classes"])
    images = []
    for entry in manifest["images"]:
        image_id = entry.get("image_id")
        if not image_id:
            raise DataError(f"manifest '{manifest_path}': image entry without id")
        feat_path = base / entry["feature_file"]
        boxes_path = base / entry["boxes_file"]
        features = read_features(feat_path)
        rows = read_boxes_csv(boxes_path)
        for lineno, (row_id, _) in enumerate(rows, start=2):
            if row_id != image_id:
                raise DataError(
                    f"{boxes_path}:{lineno}: image id '{row_id}' does not "
                    f"match manifest entry '{image_id}'"
                )
        if len(rows) != features.shape[0]:
            raise DataError(
                f"row-count mismatch for image '{image_id}': boxes file "
                f"'{boxes_path}' has {len(rows)} rows but feature file "
                f"'{feat_path}' has {features.shape[0]} rows"
            )
        gt = None
        if entry.get("gt_file"):
            gt_path = base / entry["gt_file"]
            gt = []
            for row_id, class_id, box in read_gt_csv(gt_path):
                if row_id != image_id:
                    raise DataError(
                        f"gt file '{gt_path}': image id '{row_id}' does not "
                        f"match manifest entry '{image_id}'"
                    )
                if class_id not in classes:
                    raise DataError(
                        f"gt file '{gt_path}': unknown class '{class_id}'"
                    )
                gt.append((class_id, box))
        images.append(
            ImageRecord(
                image_id=image_id,
                features=features,
                boxes=[b for _, b in rows],
                gt=gt,
            )
        )
    return Dataset(
        name=manifest["name"],
        classes=classes,
        feature_dim=int(manifest["feature_dim"]),
        images=images,
    )


# ---------------------------------------------------------------------------
# Synthetic domain-shift generator
# ---------------------------------------------------------------------------

@dataclass
class SynthShiftSpec:
    """Parameters of the synthetic source/target pair.

    Object proposals carry class-structured features and overlap their GT
    box with IoU >= ``min_object_iou``; background proposals are disjoint
    from the GT and carry isotropic features around the origin.  The target
    domain pushes everything through a random rotation whose largest
    principal angle equals ``rotation_budget``, then adds a per-class mean
    drift and isotropic noise.  Classes listed in ``corrupt_classes`` lose
    their latent structure on the target side (features become pure noise
    around the shifted class mean).
    """

    n_classes: int = 5
    feature_dim: int = 30
    samples_per_class: int = 200
    class_separation: float = 10.0
    rotation_budget: float = 1.0
    noise_scale: float = 0.1
    mean_drift: float = 1.0
    target_spread: float = 2.5
    seed: int = 0
    latent_dim: int = 12
    pos_per_image: int = 10
    neg_per_image: int = 10
    min_object_iou: float = 0.72
    corrupt_classes: tuple[int, ...] = ()

    def __post_init__(self):
        counts = (
            self.n_classes,
            self.feature_dim,
            self.samples_per_class,
            self.latent_dim,
            self.pos_per_image,
            self.neg_per_image,
        )
        if any(c < 1 for c in counts):
            raise DataError("all synthetic counts must be >= 1")
        if self.noise_scale < 0 or self.rotation_budget < 0 or self.mean_drift < 0:
            raise DataError("scales and budgets must be nonnegative")
        if self.target_spread <= 0:
            raise DataError("target_spread must be positive")
        if self.latent_dim > self.feature_dim:
            raise DataError(
                f"infeasible spec: latent_dim {self.latent_dim} exceeds "
                f"feature_dim {self.feature_dim}"
            )
        if not (0.0 < self.min_object_iou <= 1.0):
            raise DataError("min_object_iou must be in (0, 1]")
        bad = [c for c in self.corrupt_classes if not 0 <= c < self.n_classes]
        if bad:
            raise DataError(f"corrupt class indices out of range: {bad}")


_GT_SIDE = 100.0
_GT_BOX = BBox(100.0, 100.0, 100.0 + _GT_SIDE, 200.0)
_LATENT_DECAY = 0.9
_SOURCE_RESIDUAL = 0.05
_BACKGROUND_SCALE = 1.0
_CORRUPT_SCALE = 2.0


def bounded_rotation(dim: int, budget: float, rng: np.random.Generator) -> np.ndarray:
    """Random rotation turning every principal plane by ``budget`` radians.

    Built as a block-diagonal plane rotation conjugated by a random
    orthogonal matrix, so all principal angles equal the budget exactly
    (one axis stays fixed when ``dim`` is odd).
    """
    if budget == 0.0:
        return np.eye(dim)
    Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    R = np.eye(dim)
    c, s = np.cos(budget), np.sin(budget)
    for k in range(dim // 2):
        i = 2 * k
        R[i : i + 2, i : i + 2] = [[c, -s], [s, c]]
    return Q @ R @ Q.T


def _max_jitter(min_iou: float) -> float:
    # Worst case shifts both axes by J: IoU = (L-J)^2 / (2L^2 - (L-J)^2).
    L = _GT_SIDE
    return L - math.sqrt(2.0 * L * L * min_iou / (1.0 + min_iou))


def _unit_rows(M: np.ndarray) -> np.ndarray:
    return M / np.linalg.norm(M, axis=1, keepdims=True)


def generate_synthetic(spec: SynthShiftSpec) -> tuple[Dataset, Dataset, dict]:
    """Build a (source, target, oracle) triple from ``spec``.

    The oracle dict records the true rotation, class means, drift vectors,
    and per-class latent directions so tests can assert against ground
    truth rather than the pipeline's own output.
    """
    rng = np.random.default_rng(spec.seed)
    D = spec.feature_dim
    classes = [f"class{i:02d}" for i in range(spec.n_classes)]

    dirs = []
    for _ in range(spec.n_classes):
        Q, _ = np.linalg.qr(rng.normal(size=(D, spec.latent_dim)))
        dirs.append(Q)
    # Each class mean sits along its leading latent direction, so the
    # class's own subspace carries the direction that separates it from
    # the background.
    means = spec.class_separation * np.stack([A[:, 0] for A in dirs])
    scales = _LATENT_DECAY ** np.arange(spec.latent_dim)
    rotation = bounded_rotation(D, spec.rotation_budget, rng)
    drifts = spec.mean_drift * _unit_rows(rng.normal(size=(spec.n_classes, D)))
    jitter = _max_jitter(spec.min_object_iou)

    def draw_object_features(c: int, count: int, spread: float = 1.0) -> np.ndarray:
        z = rng.normal(size=(count, spec.latent_dim))
        eps = rng.normal(scale=_SOURCE_RESIDUAL, size=(count, D))
        return means[c] + (z * (spread * scales)) @ dirs[c].T + eps

    def build_domain(prefix: str, is_target: bool) -> Dataset:
        images = []
        for c in range(spec.n_classes):
            remaining = spec.samples_per_class
            j = 0
            while remaining > 0:
                k = min(spec.pos_per_image, remaining)
                remaining -= k
                image_id = f"{prefix}-c{c:02d}-i{j:03d}"
                j += 1

                boxes = []
                for _ in range(k):
                    dx, dy = rng.uniform(-jitter, jitter, size=2)
                    boxes.append(
                        BBox(
                            _GT_BOX.x_min + dx,
                            _GT_BOX.y_min + dy,
                            _GT_BOX.x_max + dx,
                            _GT_BOX.y_max + dy,
                        )
                    )
                if is_target and c in spec.corrupt_classes:
                    # Pure noise: class location survives, structure does not.
                    obj = (
                        means[c] @ rotation.T
                        + drifts[c]
                        + rng.normal(scale=_CORRUPT_SCALE, size=(k, D))
                    )
                else:
                    obj = draw_object_features(
                        c, k, spec.target_spread if is_target else 1.0
                    )
                    if is_target:
                        obj = (
                            obj @ rotation.T
                            + drifts[c]
                            + rng.normal(scale=spec.noise_scale, size=(k, D))
                        )

                for m in range(spec.neg_per_image):
                    x0 = 400.0 + 140.0 * m
                    boxes.append(BBox(x0, 400.0, x0 + _GT_SIDE, 500.0))
                bg = rng.normal(scale=_BACKGROUND_SCALE, size=(spec.neg_per_image, D))
                if is_target:
                    bg = bg @ rotation.T + rng.normal(
                        scale=spec.noise_scale, size=bg.shape
                    )

                images.append(
                    ImageRecord(
                        image_id=image_id,
                        features=np.vstack([obj, bg]),
                        boxes=boxes,
                        gt=[(classes[c], _GT_BOX)],
                    )
                )
        return Dataset(
            name=f"synth-{'target' if is_target else 'source'}",
            classes=classes,
            feature_dim=D,
            images=images,
        )

    source = build_domain("src", is_target=False)
    target = build_domain("tgt", is_target=True)
    oracle = {
        "rotation": rotation,
        "source_means": {classes[c]: means[c] for c in range(spec.n_classes)},
        "target_means": {
            classes[c]: rotation @ means[c] + drifts[c]
            for c in range(spec.n_classes)
        },
        "class_directions": {classes[c]: dirs[c] for c in range(spec.n_classes)},
        "latent_scales": scales,
        "drifts": {classes[c]: drifts[c] for c in range(spec.n_classes)},
        "spec": asdict(spec),
    }
    return source, target, oracle


# ---------------------------------------------------------------------------
# Run configuration: flat key=value file
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything a CLI run needs, with defaults matching the reference
    protocol (gamma 0.7, sigma 0.4, d 100)."""

    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    synth: SynthShiftSpec = field(default_factory=SynthShiftSpec)
    source_manifest: str | None = None
    target_manifest: str | None = None
    hist_bins: int = 20
    hist_lo: float = -3.0
    hist_hi: float = 3.0
    weak_ratio: float = 0.75
    seed: int = 0


def _parse_corrupt(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(tok) for tok in text.split(","))


_CONFIG_KEYS: dict[str, type | str] = {
    "gamma": float,
    "sigma": float,
    "d": int,
    "mode": str,
    "nms_thresh": float,
    "neg_lambda": float,
    "detect_thresh": float,
    "reg_lambda": float,
    "train_iterations": int,
    "hard_neg_rounds": int,
    "seed": int,
    "source_manifest": str,
    "target_manifest": str,
    "synth_classes": int,
    "synth_dim": int,
    "synth_samples": int,
    "synth_separation": float,
    "synth_rotation": float,
    "synth_noise": float,
    "synth_drift": float,
    "synth_spread": float,
    "synth_latent": int,
    "synth_pos_per_image": int,
    "synth_neg_per_image": int,
    "synth_min_iou": float,
    "synth_corrupt": "corrupt",
    "hist_bins": int,
    "hist_lo": float,
    "hist_hi": float,
    "weak_ratio": float,
}


def load_config(path=None) -> RunConfig:
    """Parse a flat key=value config file; ``None`` yields all defaults.

    Lines starting with '#' and blank lines are ignored; unknown keys are
    rejected so typos cannot silently fall back to defaults.
    """
    values: dict[str, object] = {}
    base: Path | None = None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"config file '{path}' does not exist")
        base = path.parent
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, _, raw = stripped.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in _CONFIG_KEYS:
                raise DataError(f"{path}:{lineno}: unknown config key '{key}'")
            kind = _CONFIG_KEYS[key]
            try:
                if kind == "corrupt":
                    values[key] = _parse_corrupt(raw)
                elif kind is str:
                    values[key] = raw
                else:
                    values[key] = kind(raw)
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: cannot parse '{raw}' for key '{key}'"
                ) from None

    seed = int(values.get("seed", 0))
    train = TrainConfig(
        reg_lambda=values.get("reg_lambda", 0.01),
        iterations=values.get("train_iterations", 2000),
        max_hard_rounds=values.get("hard_neg_rounds", 10),
        seed=seed,
    )
    adaptation = AdaptationConfig(
        gamma=values.get("gamma", 0.7),
        sigma=values.get("sigma", 0.4),
        d=values.get("d", 100),
        mode=values.get("mode", "class-specific"),
        nms_thresh=values.get("nms_thresh", 0.3),
        neg_lambda=values.get("neg_lambda", 0.3),
        detect_thresh=values.get("detect_thresh", 0.0),
        train=train,
    )
    synth = SynthShiftSpec(
        n_classes=values.get("synth_classes", 5),
        feature_dim=values.get("synth_dim", 30),
        samples_per_class=values.get("synth_samples", 200),
        class_separation=values.get("synth_separation", 10.0),
        rotation_budget=values.get("synth_rotation", 1.0),
        noise_scale=values.get("synth_noise", 0.1),
        mean_drift=values.get("synth_drift", 1.0),
        target_spread=values.get("synth_spread", 2.5),
        seed=seed,
        latent_dim=values.get("synth_latent", 12),
        pos_per_image=values.get("synth_pos_per_image", 10),
        neg_per_image=values.get("synth_neg_per_image", 10),
        min_object_iou=values.get("synth_min_iou", 0.72),
        corrupt_classes=values.get("synth_corrupt", ()),
    )

    def _resolve(p):
        if p is None or base is None:
            return p
        p = Path(p)
        return str(p if p.is_absolute() else base / p)

    return RunConfig(
        adaptation=adaptation,
        synth=synth,
        source_manifest=_resolve(values.get("source_manifest")),
        target_manifest=_resolve(values.get("target_manifest")),
        hist_bins=values.get("hist_bins", 20),
        hist_lo=values.get("hist_lo", -3.0),
        hist_hi=values.get("hist_hi", 3.0),
        weak_ratio=values.get("weak_ratio", 0.75),
        seed=seed,
    )


def config_echo(cfg: RunConfig) -> dict:
    """Flat, JSON-ready snapshot of every effective config value."""
    a, s = cfg.adaptation, cfg.synth
    return {
        "gamma": a.gamma,
        "sigma": a.sigma,
        "d": a.d,
        "mode": a.mode,
        "nms_thresh": a.nms_thresh,
        "neg_lambda": a.neg_lambda,
        "detect_thresh": a.detect_thresh,
        "reg_lambda": a.train.reg_lambda,
        "train_iterations": a.train.iterations,
        "hard_neg_rounds": a.train.max_hard_rounds,
        "seed": cfg.seed,
        "source_manifest": cfg.source_manifest,
        "target_manifest": cfg.target_manifest,
        "synth_classes": s.n_classes,
        "synth_dim": s.feature_dim,
        "synth_samples": s.samples_per_class,
        "synth_separation": s.class_separation,
        "synth_rotation": s.rotation_budget,
        "synth_noise": s.noise_scale,
        "synth_drift": s.mean_drift,
        "synth_spread": s.target_spread,
        "synth_latent": s.latent_dim,
        "synth_pos_per_image": s.pos_per_image,
        "synth_neg_per_image": s.neg_per_image,
        "synth_min_iou": s.min_object_iou,
        "synth_corrupt": list(s.corrupt_classes),
        "hist_bins": cfg.hist_bins,
        "hist_lo": cfg.hist_lo,
        "hist_hi": cfg.hist_hi,
        "weak_ratio": cfg.weak_ratio,
    }


# ---------------------------------------------------------------------------
# Detector / state bundles (canonical JSON, byte-exact round trips)
# ---------------------------------------------------------------------------

def _stats_to_dict(s: NormalizationStats) -> dict:
    return {"mean": s.mean.tolist(), "scale": s.scale.tolist()}


def _stats_from_dict(d: dict) -> NormalizationStats:
    return NormalizationStats(np.array(d["mean"]), np.array(d["scale"]))


def _subspace_to_dict(s: Subspace | None) -> dict | None:
    if s is None:
        return None
    return {
        "basis": s.basis.tolist(),
        "eigenvalues": s.eigenvalues.tolist(),
        "stats": _stats_to_dict(s.stats),
        "d": s.d,
        "label": s.label,
    }


def _subspace_from_dict(d: dict | None) -> Subspace | None:
    if d is None:
        return None
    return Subspace(
        basis=np.array(d["basis"]),
        eigenvalues=np.array(d["eigenvalues"]),
        stats=_stats_from_dict(d["stats"]),
        d=int(d["d"]),
        label=d["label"],
    )


def _detector_to_dict(det: LinearDetector) -> dict:
    return {
        "class_id": det.class_id,
        "weights": det.weights.tolist(),
        "bias": det.bias,
        "frame": det.frame,
    }


def _detector_from_dict(d: dict) -> LinearDetector:
    return LinearDetector(
        class_id=d["class_id"],
        weights=np.array(d["weights"]),
        bias=float(d["bias"]),
        frame=d["frame"],
    )


def save_detectors(path, detectors: dict[str, LinearDetector], warnings=None) -> None:
    bundle = {
        "detectors": {c: _detector_to_dict(det) for c, det in detectors.items()},
        "warnings": list(warnings or []),
    }
    Path(path).write_text(canonical_json(bundle))


def load_detectors(path) -> dict[str, LinearDetector]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"detector bundle '{path}' does not exist")
    bundle = json.loads(path.read_text())
    return {c: _detector_from_dict(d) for c, d in bundle["detectors"].items()}


def _state_to_dict(state: ClassAdaptationState) -> dict:
    return {
        "class_id": state.class_id,
        "mode": state.mode,
        "adapted_detector": _detector_to_dict(state.adapted_detector),
        "source_subspace": _subspace_to_dict(state.source_subspace),
        "target_subspace": _subspace_to_dict(state.target_subspace),
        "map": None
        if state.map is None
        else {
            "M": state.map.M.tolist(),
            "source_dim": state.map.source_dim,
            "provenance": list(state.map.provenance),
        },
        "aligned_basis": None
        if state.aligned_basis is None
        else {
            "Xa": state.aligned_basis.Xa.tolist(),
            "provenance": list(state.aligned_basis.provenance),
        },
        "n_pos_src": state.n_pos_src,
        "n_pos_tgt": state.n_pos_tgt,
        "downgraded": state.downgraded,
        "note": state.note,
    }


def _state_from_dict(d: dict) -> ClassAdaptationState:
    map_obj = None
    if d["map"] is not None:
        map_obj = AlignmentMap(
            M=np.array(d["map"]["M"]),
            source_dim=int(d["map"]["source_dim"]),
            provenance=tuple(d["map"]["provenance"]),
        )
    basis_obj = None
    if d["aligned_basis"] is not None:
        basis_obj = AlignedBasis(
            Xa=np.array(d["aligned_basis"]["Xa"]),
            provenance=tuple(d["aligned_basis"]["provenance"]),
        )
    return ClassAdaptationState(
        class_id=d["class_id"],
        mode=d["mode"],
        adapted_detector=_detector_from_dict(d["adapted_detector"]),
        source_subspace=_subspace_from_dict(d["source_subspace"]),
        target_subspace=_subspace_from_dict(d["target_subspace"]),
        map=map_obj,
        aligned_basis=basis_obj,
        n_pos_src=int(d["n_pos_src"]),
        n_pos_tgt=int(d["n_pos_tgt"]),
        downgraded=bool(d["downgraded"]),
        note=d["note"],
    )


def save_states(
    path, states: dict[str, ClassAdaptationState], warnings=None
) -> None:
    bundle = {
        "states": {c: _state_to_dict(s) for c, s in states.items()},
        "pass_through": sorted(c for c, s in states.items() if s.mode == "none"),
        "warnings": list(warnings or []),
    }
    Path(path).write_text(canonical_json(bundle))


def load_states(path) -> dict[str, ClassAdaptationState]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"state bundle '{path}' does not exist")
    bundle = json.loads(path.read_text())
    return {c: _state_from_dict(s) for c, s in bundle["states"].items()}


def save_oracle(path, oracle: dict) -> None:
    def _clean(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, dict):
            return {k: _clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [_clean(x) for x in v]
        return v

    Path(path).write_text(canonical_json(_clean(oracle)))
