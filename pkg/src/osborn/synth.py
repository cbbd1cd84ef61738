"""Synthetic model-pool generator with known ground truth.

Each pool is a set of simulated "models": per-model source datasets with
cluster structure, per-model embeddings of one shared target set, and hard
target predictions.  Three knobs control difficulty per model:

* ``domain_shift``     -- how far the model's target embedding drifts from
  its source clusters (drives the domain-difference term)
* ``prediction_noise`` -- the model's error rate; it corrupts both the
  model's source labels and its target predictions (drives the task
  difference and the true accuracy)
* ``redundancy_groups`` -- models in one group share random streams and so
  emit identical predictions (zero cohesion entropy between them); group
  members must therefore declare the same prediction_noise

Feature geometry: class means sit on a scaled coordinate simplex with unit
covariance.  Each model's source cloud reuses the target base cloud's
per-sample noise (plus a small per-group jitter) recentered on the source
class means, and its target cloud is the base cloud translated by the
model's domain shift.  A zero-shift zero-noise model therefore has near-zero
domain and task terms, and the domain term grows like shift squared.

Every draw comes from named substreams of one seed, so a spec generates a
byte-identical pool every time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_io import (
    LabelVector,
    ModelRecord,
    PoolManifest,
    PredictionVector,
    format_real,
    substream_seed,
    validate_record,
    write_features,
    write_labels,
    write_predictions,
)
from .errors import ValidationError
from .evaluation import ensemble_accuracy

import json
import os


@dataclass(frozen=True)
class SynthSpec:
    num_models: int
    feature_dim: int
    source_classes: int
    target_classes: int
    samples: int
    domain_shift: tuple
    prediction_noise: tuple
    redundancy_groups: tuple = None
    seed: int = 0
    class_separation: float = 6.0
    source_jitter: float = 0.25

    def __post_init__(self):
        m = int(self.num_models)
        if m < 2:
            raise ValidationError("num_models must be >= 2")
        object.__setattr__(self, "num_models", m)
        d = int(self.feature_dim)
        cs = int(self.source_classes)
        ct = int(self.target_classes)
        n = int(self.samples)
        if cs < 1 or ct < 1:
            raise ValidationError("class counts must be >= 1")
        if d < max(cs, ct):
            raise ValidationError(
                f"feature_dim ({d}) must be >= the larger class count "
                f"({max(cs, ct)}) so classes get distinct mean directions"
            )
        if n < max(cs, ct):
            raise ValidationError(
                f"samples ({n}) must cover every class (need >= {max(cs, ct)})"
            )
        object.__setattr__(self, "feature_dim", d)
        object.__setattr__(self, "source_classes", cs)
        object.__setattr__(self, "target_classes", ct)
        object.__setattr__(self, "samples", n)

        shift = tuple(float(x) for x in self.domain_shift)
        noise = tuple(float(x) for x in self.prediction_noise)
        if len(shift) != m or len(noise) != m:
            raise ValidationError(
                "domain_shift and prediction_noise must list one value per model"
            )
        if any(x < 0 for x in shift):
            raise ValidationError("domain_shift values must be >= 0")
        if any(not (0.0 <= x <= 1.0) for x in noise):
            raise ValidationError("prediction_noise values must lie in [0, 1]")
        object.__setattr__(self, "domain_shift", shift)
        object.__setattr__(self, "prediction_noise", noise)

        raw_groups = self.redundancy_groups
        if raw_groups is None:
            raw_groups = default_groups(m)
        groups = tuple(tuple(int(i) for i in g) for g in raw_groups)
        flat = [i for g in groups for i in g]
        if sorted(flat) != list(range(m)):
            raise ValidationError(
                "redundancy_groups must partition model indices 0..num_models-1"
            )
        if any(len(g) == 0 for g in groups):
            raise ValidationError("redundancy_groups must not contain empty groups")
        for g in groups:
            levels = {noise[i] for i in g}
            if len(levels) > 1:
                raise ValidationError(
                    f"models {g} share a redundancy group but declare different "
                    "prediction_noise; grouped models share one noise realization"
                )
        object.__setattr__(self, "redundancy_groups", groups)
        object.__setattr__(self, "seed", int(self.seed))
        sep = float(self.class_separation)
        if not (sep > 0):
            raise ValidationError("class_separation must be > 0")
        object.__setattr__(self, "class_separation", sep)
        jitter = float(self.source_jitter)
        if jitter < 0:
            raise ValidationError("source_jitter must be >= 0")
        object.__setattr__(self, "source_jitter", jitter)

    def group_of(self) -> dict:
        out = {}
        for gi, g in enumerate(self.redundancy_groups):
            for r in g:
                out[r] = gi
        return out


@dataclass(frozen=True)
class SynthPool:
    manifest: PoolManifest
    qualities: dict
    groups: dict
    spec: SynthSpec


def default_groups(num_models: int) -> tuple:
    return tuple((i,) for i in range(num_models))


def _model_id(r: int, num_models: int) -> str:
    width = max(2, len(str(num_models - 1)))
    return f"m{r:0{width}d}"


def _rng(spec: SynthSpec, *tags) -> np.random.Generator:
    return np.random.default_rng(substream_seed(spec.seed, *[str(t) for t in tags]))


def _balanced_labels(n, classes, rng):
    labels = np.arange(n, dtype=np.int64) % classes
    rng.shuffle(labels)
    return labels


def _flip(labels, prob, uniforms, offsets, classes):
    out = labels.copy()
    if classes < 2 or prob <= 0:
        return out
    mask = uniforms < prob
    out[mask] = (out[mask] + offsets[mask]) % classes
    return out


def build_pool(spec: SynthSpec) -> SynthPool:
    """Materialize the pool in memory.  Deterministic in the spec."""
    n = spec.samples
    d = spec.feature_dim
    cs = spec.source_classes
    ct = spec.target_classes
    sep = spec.class_separation

    means_s = np.zeros((cs, d))
    means_s[np.arange(cs), np.arange(cs)] = sep
    means_t = np.zeros((ct, d))
    means_t[np.arange(ct), np.arange(ct)] = sep
    shift_dir = np.full(d, 1.0 / np.sqrt(d))

    y_t = _balanced_labels(n, ct, _rng(spec, "target-labels"))
    base_noise = _rng(spec, "target-features").standard_normal((n, d))
    base_t = means_t[y_t] + base_noise
    target_labels = LabelVector(y_t, ct)

    # source clusters mirror the target clusters (folded when C_s < C_t)
    z = y_t % cs

    # one stream bundle per redundancy group; members reuse the same draws
    group_of = spec.group_of()
    group_draws = {}
    for gi in range(len(spec.redundancy_groups)):
        rs = _rng(spec, "source", gi)
        jitter = rs.standard_normal((n, d))
        u_src = rs.random(n)
        off_src = rs.integers(1, cs, size=n) if cs >= 2 else np.zeros(n, dtype=np.int64)
        rp = _rng(spec, "prediction-noise", gi)
        u_tgt = rp.random(n)
        off_tgt = rp.integers(1, cs, size=n) if cs >= 2 else np.zeros(n, dtype=np.int64)
        group_draws[gi] = (jitter, u_src, off_src, u_tgt, off_tgt)

    pred_base = y_t if cs >= ct else y_t % cs

    models = []
    qualities = {}
    groups = {}
    for r in range(spec.num_models):
        mid = _model_id(r, spec.num_models)
        gi = group_of[r]
        jitter, u_src, off_src, u_tgt, off_tgt = group_draws[gi]
        noise = spec.prediction_noise[r]

        src_features = means_s[z] + base_noise + spec.source_jitter * jitter
        src_labels = _flip(z, noise, u_src, off_src, cs)
        tgt_features = base_t + spec.domain_shift[r] * shift_dir
        preds = _flip(pred_base, noise, u_tgt, off_tgt, cs)

        rec = ModelRecord(
            model_id=mid,
            source_features=src_features,
            source_labels=LabelVector(src_labels, cs),
            target_features=tgt_features,
            target_predictions=PredictionVector(preds, cs),
        )
        validate_record(rec)
        models.append(rec)
        qualities[mid] = float(np.mean(preds == y_t))
        groups[mid] = gi

    manifest = PoolManifest(models=tuple(models), target_labels=target_labels)
    return SynthPool(manifest=manifest, qualities=qualities, groups=groups, spec=spec)


def proxy_accuracy(member_ids, pool) -> float:
    """Majority-vote accuracy of the named models on the pool's target set."""
    manifest = pool.manifest if isinstance(pool, SynthPool) else pool
    preds = [manifest.record(str(mid)).target_predictions for mid in member_ids]
    return ensemble_accuracy(preds, manifest.target_labels)


# ---------------------------------------------------------------------------
# spec file format
# ---------------------------------------------------------------------------


def _parse_per_model(text, m, key, lo=None, hi=None):
    parts = [p.strip() for p in text.split(";") if p.strip()]
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ValidationError(f"bad value in '{key}'") from exc
    if len(vals) == 1:
        vals = vals * m
    if len(vals) != m:
        raise ValidationError(
            f"'{key}' must give 1 or num_models values, got {len(vals)}"
        )
    return tuple(vals)


def _parse_groups(text):
    groups = []
    for part in text.split("|"):
        part = part.strip()
        if not part:
            continue
        try:
            groups.append(tuple(int(x.strip()) for x in part.split(",")))
        except ValueError as exc:
            raise ValidationError("redundancy_groups expects integers") from exc
    return tuple(groups)


def read_synth_spec(path) -> SynthSpec:
    """Parse a ``key = value`` pool spec.

    Per-model lists are semicolon separated (a single value broadcasts);
    redundancy groups separate members with commas and groups with ``|``.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ValidationError(f"cannot read spec file '{path}': {exc}") from exc
    raw = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()

    required = ("num_models", "feature_dim", "source_classes", "target_classes",
                "samples", "seed")
    for key in required:
        if key not in raw:
            raise ValidationError(f"{path}: missing required key '{key}'")
    try:
        m = int(raw["num_models"])
    except ValueError as exc:
        raise ValidationError(f"{path}: num_models must be an integer") from exc

    known = set(required) | {"domain_shift", "prediction_noise",
                             "redundancy_groups", "class_separation",
                             "source_jitter"}
    for key in raw:
        if key not in known:
            raise ValidationError(f"{path}: unknown key '{key}'")

    try:
        kwargs = dict(
            num_models=m,
            feature_dim=int(raw["feature_dim"]),
            source_classes=int(raw["source_classes"]),
            target_classes=int(raw["target_classes"]),
            samples=int(raw["samples"]),
            seed=int(raw["seed"]),
        )
    except ValueError as exc:
        raise ValidationError(f"{path}: non-integer scalar field") from exc
    kwargs["domain_shift"] = _parse_per_model(raw.get("domain_shift", "0"), m,
                                              "domain_shift")
    kwargs["prediction_noise"] = _parse_per_model(raw.get("prediction_noise", "0"),
                                                  m, "prediction_noise")
    if "redundancy_groups" in raw:
        kwargs["redundancy_groups"] = _parse_groups(raw["redundancy_groups"])
    else:
        kwargs["redundancy_groups"] = default_groups(m)
    if "class_separation" in raw:
        try:
            kwargs["class_separation"] = float(raw["class_separation"])
        except ValueError as exc:
            raise ValidationError(f"{path}: bad class_separation") from exc
    if "source_jitter" in raw:
        try:
            kwargs["source_jitter"] = float(raw["source_jitter"])
        except ValueError as exc:
            raise ValidationError(f"{path}: bad source_jitter") from exc
    try:
        return SynthSpec(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def write_synth_spec(spec: SynthSpec, path):
    groups = "|".join(",".join(str(i) for i in g) for g in spec.redundancy_groups)
    lines = [
        f"num_models = {spec.num_models}",
        f"feature_dim = {spec.feature_dim}",
        f"source_classes = {spec.source_classes}",
        f"target_classes = {spec.target_classes}",
        f"samples = {spec.samples}",
        f"domain_shift = {';'.join(format_real(x) for x in spec.domain_shift)}",
        f"prediction_noise = {';'.join(format_real(x) for x in spec.prediction_noise)}",
        f"redundancy_groups = {groups}",
        f"seed = {spec.seed}",
        f"class_separation = {format_real(spec.class_separation)}",
        f"source_jitter = {format_real(spec.source_jitter)}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def generate(spec: SynthSpec, out_dir) -> SynthPool:
    """Build the pool and write it as a loadable directory.

    Emits ``pool.json`` plus per-model CSV files, the resolved spec, and
    ``truth.csv`` (per-model group, knobs, and measured accuracy).
    """
    pool = build_pool(spec)
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"target_labels": "target_labels.csv", "models": []}
    write_labels(pool.manifest.target_labels, os.path.join(out_dir, "target_labels.csv"))
    for rec in pool.manifest.models:
        mid = rec.model_id
        names = {
            "source_features": f"{mid}_source_features.csv",
            "source_labels": f"{mid}_source_labels.csv",
            "target_features": f"{mid}_target_features.csv",
            "target_predictions": f"{mid}_predictions.csv",
        }
        write_features(rec.source_features, os.path.join(out_dir, names["source_features"]))
        write_labels(rec.source_labels, os.path.join(out_dir, names["source_labels"]))
        write_features(rec.target_features, os.path.join(out_dir, names["target_features"]))
        write_predictions(rec.target_predictions,
                          os.path.join(out_dir, names["target_predictions"]))
        manifest["models"].append({"id": mid, **names})
    with open(os.path.join(out_dir, "pool.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_synth_spec(spec, os.path.join(out_dir, "synth.spec"))
    with open(os.path.join(out_dir, "truth.csv"), "w", encoding="utf-8") as fh:
        fh.write("model_id,group,domain_shift,prediction_noise,quality\n")
        for r in range(spec.num_models):
            mid = _model_id(r, spec.num_models)
            fh.write(
                f"{mid},{pool.groups[mid]},{format_real(spec.domain_shift[r])},"
                f"{format_real(spec.prediction_noise[r])},"
                f"{format_real(pool.qualities[mid])}\n"
            )
    return pool
