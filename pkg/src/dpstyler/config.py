"""Run configuration: a single YAML document covering all commands.

All training hyperparameters default to the standard recipe (100
epochs, SGD lr 0.008 momentum 0.9, batch 128, K=80 styles, ArcFace
scale 5 margin 0.5, three prompt templates), so a minimal config only
names the backend and the task's class names:

.. code-block:: yaml

    backend:
      variant: toy
      dim_joint: 64
      dim_token: 32
    task:
      class_names: [dog, elephant, giraffe, guitar, horse]
    eval:
      manifest: path/to/data    # directory root or CSV manifest
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .backends import EncoderBackend, ToyBackend, ToyBackendSpec
from .core import PromptTemplate, TaskDefinition
from .losses import ArcFaceConfig
from .styles import PredefinedLexicon, StyleGenConfig, load_lexicon_words
from .trainer import TrainConfig

DEFAULT_TEMPLATES = (
    "a [class] in a S* style",
    "a S* style of a [class]",
    "a photo of a [class] with S* like style",
)

WEIGHTS_ENV_VAR = "DPSTYLER_BACKEND_WEIGHTS"


class ConfigError(ValueError):
    """Raised for unreadable, invalid, or incomplete run configs."""


@dataclass
class RunConfig:
    backend_variant: str
    backend_spec: ToyBackendSpec | None
    external_variant: str | None
    external_weights: str | None
    task: TaskDefinition
    train: TrainConfig
    templates: tuple[PromptTemplate, ...]
    lexicon_path: str | None
    eval_manifest: str | None
    fusion: str
    output_dir: str
    raw: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        """Stable short hash of the merged config document."""
        blob = json.dumps(self.raw, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:8]

    def build_backend(self) -> EncoderBackend:
        if self.backend_variant == "toy":
            return ToyBackend(self.backend_spec, self.task.class_names)
        raise ConfigError(
            "backend variant 'external' is an adapter contract only: provide a "
            "RealBackendAdapter subclass wrapping the pretrained weights at "
            f"{self.external_weights or '<unset weights path>'}"
        )

    def build_lexicon(self, backend: EncoderBackend) -> PredefinedLexicon:
        path = self.lexicon_path
        if path is None:
            ref = resources.files("dpstyler").joinpath("data/lexicon.txt")
            with resources.as_file(ref) as p:
                words = load_lexicon_words(p)
        else:
            if not os.path.exists(path):
                raise ConfigError(f"lexicon file not found: {path}")
            words = load_lexicon_words(path)
        expected = self.train.style_gen.lexicon_size
        if len(words) != expected:
            raise ConfigError(
                f"lexicon has {len(words)} words but config expects {expected}"
            )
        vectors = np.stack([backend.token_embedding_lookup(w) for w in words])
        return PredefinedLexicon(labels=tuple(words), vectors=vectors)


def _section(doc: dict, name: str) -> dict:
    value = doc.get(name, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return dict(value)


def load_run_config(path, seed_override: int | None = None, out_override: str | None = None,
                    fusion_override: str | None = None) -> RunConfig:
    """Parse and validate a YAML run config, applying CLI overrides."""
    import yaml

    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    backend_sec = _section(doc, "backend")
    task_sec = _section(doc, "task")
    train_sec = _section(doc, "train")
    styles_sec = _section(doc, "styles")
    eval_sec = _section(doc, "eval")

    seed = int(train_sec.get("seed", doc.get("seed", 0)))
    if seed_override is not None:
        seed = seed_override

    variant = backend_sec.get("variant", "toy")
    if variant not in ("toy", "external"):
        raise ConfigError(f"backend.variant must be 'toy' or 'external', got {variant!r}")

    class_names = task_sec.get("class_names")
    if not class_names:
        raise ConfigError("task.class_names is required")
    try:
        task = TaskDefinition(class_names=tuple(str(n) for n in class_names))
    except ValueError as exc:
        raise ConfigError(f"invalid task: {exc}") from exc

    backend_spec = None
    external_variant = external_weights = None
    if variant == "toy":
        try:
            backend_spec = ToyBackendSpec(
                dim_joint=int(backend_sec.get("dim_joint", 64)),
                dim_token=int(backend_sec.get("dim_token", 32)),
                max_classes=int(backend_sec.get("max_classes", 16)),
                noise_level=float(backend_sec.get("noise_level", 0.1)),
                seed=int(backend_sec.get("seed", seed)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid backend section: {exc}") from exc
    else:
        external_variant = backend_sec.get("model", "resnet50")
        external_weights = os.environ.get(WEIGHTS_ENV_VAR) or backend_sec.get("weights_path")

    try:
        style_gen = StyleGenConfig(
            num_styles=int(styles_sec.get("num_styles", 80)),
            strategy=str(styles_sec.get("strategy", "random_mix")),
            alpha=float(styles_sec.get("alpha", 0.1)),
            lexicon_size=int(styles_sec.get("lexicon_size", 8)),
            gaussian_std=float(styles_sec.get("gaussian_std", 0.02)),
            seed=seed,
        )
        train = TrainConfig(
            epochs=int(train_sec.get("epochs", 100)),
            learning_rate=float(train_sec.get("learning_rate", 0.008)),
            momentum=float(train_sec.get("momentum", 0.9)),
            batch_size=int(train_sec.get("batch_size", 128)),
            ratio=int(train_sec.get("ratio", 16)),
            style_gen=style_gen,
            arcface=ArcFaceConfig(
                scale=float(train_sec.get("arcface_scale", 5.0)),
                margin=float(train_sec.get("arcface_margin", 0.5)),
            ),
            seed=seed,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train/styles section: {exc}") from exc

    patterns = doc.get("templates") or list(DEFAULT_TEMPLATES)
    try:
        templates = tuple(PromptTemplate.from_pattern(str(p)) for p in patterns)
    except ValueError as exc:
        raise ConfigError(f"invalid template: {exc}") from exc

    fusion = str(eval_sec.get("fusion", "max"))
    if fusion_override is not None:
        fusion = fusion_override
    if fusion not in ("max", "average"):
        raise ConfigError(f"fusion must be 'max' or 'average', got {fusion!r}")

    lexicon_path = styles_sec.get("lexicon")
    manifest = eval_sec.get("manifest")
    output_dir = out_override or doc.get("output_dir", ".")

    merged = {
        "backend": backend_sec | {"variant": variant},
        "task": {"class_names": list(task.class_names)},
        "train": {
            "epochs": train.epochs,
            "learning_rate": train.learning_rate,
            "momentum": train.momentum,
            "batch_size": train.batch_size,
            "num_styles": style_gen.num_styles,
            "ratio": train.ratio,
            "arcface_scale": train.arcface.scale,
            "arcface_margin": train.arcface.margin,
            "seed": seed,
        },
        "styles": {
            "strategy": style_gen.strategy,
            "alpha": style_gen.alpha,
            "lexicon_size": style_gen.lexicon_size,
            "gaussian_std": style_gen.gaussian_std,
            "lexicon": lexicon_path,
        },
        "templates": [t.pattern for t in templates],
        "eval": {"manifest": manifest, "fusion": fusion},
        "output_dir": output_dir,
    }
    return RunConfig(
        backend_variant=variant,
        backend_spec=backend_spec,
        external_variant=external_variant,
        external_weights=external_weights,
        task=task,
        train=train,
        templates=templates,
        lexicon_path=lexicon_path,
        eval_manifest=manifest,
        fusion=fusion,
        output_dir=output_dir,
        raw=merged,
    )
