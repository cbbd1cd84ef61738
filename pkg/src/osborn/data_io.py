"""On-disk formats, pool loading, run configuration, and subsampling.

All text formats are plain CSV-like files with deterministic field order so
that repeated runs produce byte-identical artifacts.  Reals are rendered with
``repr`` (shortest round-tripping form), which preserves the exact float64
value across a write/read cycle.
"""

from __future__ import annotations

import dataclasses
import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

_ID_FORBIDDEN = set(",;\r\n\t")

REGULARIZERS = ("entropic", "frobenius")


def format_real(x) -> str:
    """Render a float so that parsing the text recovers the same float64."""
    return repr(float(x))


def substream_seed(seed: int, *tags: str) -> int:
    """Derive a stable child seed from a base seed and a sequence of names.

    Uses CRC32 of each tag as entropy words for a SeedSequence, so the result
    does not depend on interpreter hash randomization.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    words.extend(zlib.crc32(t.encode("utf-8")) for t in tags)
    ss = np.random.SeedSequence(words)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# core value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabelVector:
    """Integer class labels in ``[0, num_classes)``."""

    values: np.ndarray
    num_classes: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size == 0:
            raise ValidationError("label vector must be a non-empty 1-d array")
        if int(self.num_classes) < 1:
            raise ValidationError("num_classes must be >= 1")
        object.__setattr__(self, "num_classes", int(self.num_classes))
        if v.min() < 0 or v.max() >= self.num_classes:
            raise ValidationError(
                f"labels must lie in [0, {self.num_classes}); "
                f"saw range [{int(v.min())}, {int(v.max())}]"
            )

    def __len__(self):
        return int(self.values.shape[0])


@dataclass(frozen=True)
class PredictionVector:
    """Hard class predictions over a fixed evaluation set."""

    values: np.ndarray
    num_classes: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size == 0:
            raise ValidationError("prediction vector must be a non-empty 1-d array")
        if int(self.num_classes) < 1:
            raise ValidationError("num_classes must be >= 1")
        object.__setattr__(self, "num_classes", int(self.num_classes))
        if v.min() < 0 or v.max() >= self.num_classes:
            raise ValidationError(
                f"predictions must lie in [0, {self.num_classes}); "
                f"saw range [{int(v.min())}, {int(v.max())}]"
            )

    def __len__(self):
        return int(self.values.shape[0])


@dataclass(frozen=True)
class ModelRecord:
    """One candidate model: its extracted features, labels, and predictions.

    ``source_features`` and ``target_features`` are embeddings produced by the
    same extractor, so they share a feature dimension.  ``target_predictions``
    are the model's hard predictions on the shared target set, expressed in the
    model's own source label space.
    """

    model_id: str
    source_features: np.ndarray
    source_labels: LabelVector
    target_features: np.ndarray
    target_predictions: PredictionVector


@dataclass(frozen=True)
class PoolManifest:
    """A pool of candidate models plus ground-truth target labels."""

    models: tuple
    target_labels: LabelVector

    @property
    def size(self) -> int:
        return len(self.models)

    def model_ids(self):
        return tuple(m.model_id for m in self.models)

    def record(self, model_id: str) -> ModelRecord:
        for m in self.models:
            if m.model_id == model_id:
                return m
        raise ValidationError(f"unknown model id '{model_id}'")


@dataclass(frozen=True)
class RankingRecord:
    """One scored ensemble: member ids, proxy score, optional true accuracy."""

    ensemble: tuple
    alpha: float
    accuracy: float | None = None

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ensemble)
        if not ids:
            raise ValidationError("ranking record needs at least one member id")
        object.__setattr__(self, "ensemble", ids)
        object.__setattr__(self, "alpha", float(self.alpha))
        if self.accuracy is not None:
            a = float(self.accuracy)
            if not (0.0 <= a <= 1.0):
                raise ValidationError(f"accuracy must lie in [0, 1], got {a}")
            object.__setattr__(self, "accuracy", a)


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclass
class TEConfig:
    """Numerical and weighting knobs for a scoring run.

    ``epsilon`` is scale-free: the solver regularization actually used is
    ``epsilon * median(cost matrix)``, so the default behaves consistently
    across feature scales.
    """

    epsilon: float = 0.1
    regularizer: str = "entropic"
    max_iters: int = 1000
    convergence_tol: float = 1e-6
    lambda_d: float = 1.0
    lambda_t: float = 1.0
    lambda_c: float = 1.0
    standardize: bool = True
    subsample_cap: int = 5000
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (float(self.epsilon) > 0):
            raise ValidationError("epsilon must be > 0")
        if self.regularizer not in REGULARIZERS:
            raise ValidationError(
                f"regularizer must be one of {REGULARIZERS}, got '{self.regularizer}'"
            )
        if int(self.max_iters) < 1:
            raise ValidationError("max_iters must be >= 1")
        if not (float(self.convergence_tol) > 0):
            raise ValidationError("convergence_tol must be > 0")
        for name in ("lambda_d", "lambda_t", "lambda_c"):
            if float(getattr(self, name)) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if int(self.subsample_cap) < 1:
            raise ValidationError("subsample_cap must be >= 1")
        self.epsilon = float(self.epsilon)
        self.max_iters = int(self.max_iters)
        self.convergence_tol = float(self.convergence_tol)
        self.lambda_d = float(self.lambda_d)
        self.lambda_t = float(self.lambda_t)
        self.lambda_c = float(self.lambda_c)
        self.standardize = bool(self.standardize)
        self.subsample_cap = int(self.subsample_cap)
        self.seed = int(self.seed)


_CONFIG_KEYS = {
    "epsilon": float,
    "regularizer": str,
    "max_iters": int,
    "convergence_tol": float,
    "lambda_d": float,
    "lambda_t": float,
    "lambda_c": float,
    "standardize": None,  # bool, parsed specially
    "subsample_cap": int,
    "seed": int,
}


def _parse_bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValidationError(f"config key '{key}' expects true/false, got '{text}'")


def read_config(path) -> TEConfig:
    """Parse a ``key = value`` config file; unknown keys are rejected."""
    cfg = TEConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ValidationError(f"cannot read config file '{path}': {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ValidationError(f"{path}:{lineno}: unknown config key '{key}'")
        if key == "standardize":
            setattr(cfg, key, _parse_bool(value, key))
            continue
        caster = _CONFIG_KEYS[key]
        try:
            setattr(cfg, key, caster(value))
        except ValueError as exc:
            raise ValidationError(
                f"{path}:{lineno}: bad value '{value}' for '{key}'"
            ) from exc
    cfg.validate()
    return cfg


def write_config(cfg: TEConfig, path):
    lines = [
        f"epsilon = {format_real(cfg.epsilon)}",
        f"regularizer = {cfg.regularizer}",
        f"max_iters = {cfg.max_iters}",
        f"convergence_tol = {format_real(cfg.convergence_tol)}",
        f"lambda_d = {format_real(cfg.lambda_d)}",
        f"lambda_t = {format_real(cfg.lambda_t)}",
        f"lambda_c = {format_real(cfg.lambda_c)}",
        f"standardize = {'true' if cfg.standardize else 'false'}",
        f"subsample_cap = {cfg.subsample_cap}",
        f"seed = {cfg.seed}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# feature / label files
# ---------------------------------------------------------------------------


def read_features(path) -> np.ndarray:
    """Read a feature matrix: a ``d=<int>`` header then one CSV row per sample."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ValidationError(f"cannot read features file '{path}': {exc}") from exc
    if not lines or not lines[0].startswith("d="):
        raise ValidationError(f"{path}: first line must be 'd=<int>'")
    try:
        d = int(lines[0][2:])
    except ValueError as exc:
        raise ValidationError(f"{path}: bad dimension header '{lines[0]}'") from exc
    if d < 1:
        raise ValidationError(f"{path}: feature dimension must be >= 1")
    rows = lines[1:]
    if not rows:
        raise ValidationError(f"{path}: no feature rows")
    out = np.empty((len(rows), d), dtype=np.float64)
    for i, row in enumerate(rows):
        parts = row.split(",")
        if len(parts) != d:
            raise ValidationError(
                f"{path}: row {i + 1} has {len(parts)} values, expected {d}"
            )
        try:
            out[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise ValidationError(f"{path}: row {i + 1} has a non-numeric value") from exc
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{path}: non-finite feature value")
    return out


def write_features(features: np.ndarray, path):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.size == 0:
        raise ValidationError("feature matrix must be 2-d and non-empty")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"d={X.shape[1]}\n")
        for row in X:
            fh.write(",".join(format_real(v) for v in row) + "\n")


def _read_class_file(path, kind: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ValidationError(f"cannot read {kind} file '{path}': {exc}") from exc
    if not lines or not lines[0].startswith("C="):
        raise ValidationError(f"{path}: first line must be 'C=<int>'")
    try:
        num_classes = int(lines[0][2:])
    except ValueError as exc:
        raise ValidationError(f"{path}: bad class-count header '{lines[0]}'") from exc
    body = lines[1:]
    if not body:
        raise ValidationError(f"{path}: no {kind} rows")
    try:
        values = np.array([int(x) for x in body], dtype=np.int64)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-integer {kind} value") from exc
    return values, num_classes


def read_labels(path) -> LabelVector:
    values, num_classes = _read_class_file(path, "label")
    try:
        return LabelVector(values, num_classes)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def read_predictions(path) -> PredictionVector:
    values, num_classes = _read_class_file(path, "prediction")
    try:
        return PredictionVector(values, num_classes)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _write_class_file(values, num_classes, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"C={int(num_classes)}\n")
        for v in np.asarray(values, dtype=np.int64):
            fh.write(f"{int(v)}\n")


def write_labels(labels: LabelVector, path):
    _write_class_file(labels.values, labels.num_classes, path)


def write_predictions(preds: PredictionVector, path):
    _write_class_file(preds.values, preds.num_classes, path)


# ---------------------------------------------------------------------------
# pool manifest
# ---------------------------------------------------------------------------


def _check_model_id(mid):
    if not isinstance(mid, str) or not mid:
        raise ValidationError("model id must be a non-empty string")
    if any(ch in _ID_FORBIDDEN for ch in mid):
        raise ValidationError(
            f"model id '{mid}' contains a reserved character (comma/semicolon/whitespace)"
        )


def validate_record(rec: ModelRecord):
    """Check internal consistency of one model record."""
    _check_model_id(rec.model_id)
    mid = rec.model_id
    S = rec.source_features
    T = rec.target_features
    if S.ndim != 2 or T.ndim != 2:
        raise ValidationError(f"model '{mid}': feature matrices must be 2-d")
    if S.shape[1] != T.shape[1]:
        raise ValidationError(
            f"model '{mid}': source/target feature dimension mismatch "
            f"({S.shape[1]} vs {T.shape[1]})"
        )
    if S.shape[0] != len(rec.source_labels):
        raise ValidationError(
            f"model '{mid}': {S.shape[0]} source rows but "
            f"{len(rec.source_labels)} source labels"
        )
    if not np.all(np.isfinite(S)) or not np.all(np.isfinite(T)):
        raise ValidationError(f"model '{mid}': non-finite feature value")


def load_pool(manifest_path) -> PoolManifest:
    """Load a pool manifest (JSON) and every file it references.

    Relative paths in the manifest are resolved against the manifest's
    directory.  All cross-file consistency rules are enforced here so that
    downstream code can assume a well-formed pool.
    """
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read manifest '{manifest_path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest '{manifest_path}' is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"manifest '{manifest_path}' must be a JSON object")
    base = os.path.dirname(os.path.abspath(manifest_path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        target_labels_path = doc["target_labels"]
        entries = doc["models"]
    except KeyError as exc:
        raise ValidationError(f"manifest missing required key {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise ValidationError("manifest must list at least one model")

    target_labels = read_labels(resolve(target_labels_path))
    n_target = len(target_labels)

    models = []
    seen = set()
    for entry in entries:
        if not isinstance(entry, dict):
            raise ValidationError("each manifest model entry must be a JSON object")
        try:
            mid = entry["id"]
            sf = entry["source_features"]
            sl = entry["source_labels"]
            tf = entry["target_features"]
            tp = entry["target_predictions"]
        except KeyError as exc:
            raise ValidationError(f"model entry missing required key {exc}") from exc
        _check_model_id(mid)
        if mid in seen:
            raise ValidationError(f"duplicate model id '{mid}' in manifest")
        seen.add(mid)
        rec = ModelRecord(
            model_id=mid,
            source_features=read_features(resolve(sf)),
            source_labels=read_labels(resolve(sl)),
            target_features=read_features(resolve(tf)),
            target_predictions=read_predictions(resolve(tp)),
        )
        validate_record(rec)
        if rec.target_features.shape[0] != n_target:
            raise ValidationError(
                f"model '{mid}': {rec.target_features.shape[0]} target feature rows "
                f"but the pool has {n_target} target labels"
            )
        if len(rec.target_predictions) != n_target:
            raise ValidationError(
                f"model '{mid}': {len(rec.target_predictions)} predictions "
                f"but the pool has {n_target} target labels"
            )
        models.append(rec)
    return PoolManifest(models=tuple(models), target_labels=target_labels)


# ---------------------------------------------------------------------------
# stratified subsampling
# ---------------------------------------------------------------------------


def stratified_indices(labels: LabelVector, cap: int, seed: int) -> np.ndarray:
    """Pick at most ``cap`` row indices, keeping every observed class.

    Each observed class gets one guaranteed draw; the remaining budget is
    filled by weighted sampling without replacement with per-sample weight
    proportional to 1 / (class count), which flattens class imbalance.
    Returned indices are sorted ascending.
    """
    cap = int(cap)
    if cap < 1:
        raise ValidationError("subsample cap must be >= 1")
    values = labels.values
    n = values.shape[0]
    if cap >= n:
        return np.arange(n, dtype=np.int64)
    classes, counts = np.unique(values, return_counts=True)
    if cap < classes.shape[0]:
        raise ValidationError(
            f"subsample cap {cap} is below the number of observed classes "
            f"({classes.shape[0]})"
        )
    rng = np.random.default_rng(int(seed))
    taken = np.zeros(n, dtype=bool)
    chosen = []
    for c in classes:
        idx_c = np.flatnonzero(values == c)
        pick = int(idx_c[rng.integers(idx_c.shape[0])])
        chosen.append(pick)
        taken[pick] = True
    budget = cap - classes.shape[0]
    if budget > 0:
        count_of = dict(zip(classes.tolist(), counts.tolist()))
        weights = np.array([1.0 / count_of[int(v)] for v in values])
        weights[taken] = 0.0
        weights = weights / weights.sum()
        extra = rng.choice(n, size=budget, replace=False, p=weights)
        chosen.extend(int(i) for i in extra)
    return np.sort(np.asarray(chosen, dtype=np.int64))


def stratified_subsample(features, labels: LabelVector, cap: int, seed: int):
    """Subsample (features, labels) jointly; identity when n <= cap."""
    X = np.asarray(features, dtype=np.float64)
    if X.shape[0] != len(labels):
        raise ValidationError(
            f"features have {X.shape[0]} rows but labels have {len(labels)}"
        )
    idx = stratified_indices(labels, cap, seed)
    if idx.shape[0] == X.shape[0]:
        return X, labels
    return X[idx], LabelVector(labels.values[idx], labels.num_classes)


# ---------------------------------------------------------------------------
# ranking files
# ---------------------------------------------------------------------------


def write_scores(records, path):
    """Write ranking rows as ``ensemble,alpha,accuracy`` CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ensemble,alpha,accuracy\n")
        for rec in records:
            ids = ";".join(rec.ensemble)
            acc = "" if rec.accuracy is None else format_real(rec.accuracy)
            fh.write(f"{ids},{format_real(rec.alpha)},{acc}\n")


def read_scores(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh]
    except OSError as exc:
        raise ValidationError(f"cannot read rankings file '{path}': {exc}") from exc
    lines = [ln for ln in lines if ln.strip()]
    if not lines or lines[0] != "ensemble,alpha,accuracy":
        raise ValidationError(f"{path}: expected header 'ensemble,alpha,accuracy'")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 fields")
        ids = tuple(p for p in parts[0].split(";") if p)
        if not ids:
            raise ValidationError(f"{path}:{lineno}: empty ensemble field")
        try:
            alpha = float(parts[1])
            accuracy = None if parts[2] == "" else float(parts[2])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: non-numeric field") from exc
        records.append(RankingRecord(ensemble=ids, alpha=alpha, accuracy=accuracy))
    return records
