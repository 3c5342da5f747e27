"""Inference and evaluation: transplant heads to images, fuse, report.

A trained (remover, classifier) pair is applied to L2-normalized image
features.  One model is trained per prompt template; an ensemble fuses
their per-class cosine scores either by taking the global maximum over
all members' scores or by averaging per class.  Zero-shot baselines
score images directly against class-name prompts.

Evaluation walks a dataset manifest (directory layout root/domain/class/
file, or a CSV with path,domain,class columns) and reports per-domain
top-1 accuracy plus the across-domain mean.  Decode failures are
counted and excluded rather than aborting the run.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .backends import EncoderBackend, ImageDecodeError, ToyBackend, toy_image_load
from .core import TaskDefinition, l2_normalize
from .remover import remover_forward
from .trainer import Checkpoint

ZEROSHOT_PATTERNS = {"C": "[class]", "PC": "a photo of a [class]"}

FUSION_MODES = ("max", "average")


@dataclass(frozen=True)
class EnsembleBundle:
    """N trained models sharing one backend descriptor and class list."""

    members: tuple[Checkpoint, ...]
    fusion: str = "max"

    def __post_init__(self):
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        if len(members) < 1:
            raise ValueError("ensemble needs at least one member")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        first = members[0]
        for ckpt in members[1:]:
            if ckpt.dim_joint != first.dim_joint:
                raise ValueError("ensemble members disagree on joint dimension")
            if ckpt.class_names != first.class_names:
                raise ValueError("ensemble members disagree on class names")

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.members[0].class_names


def predict_scores(image_embedding: np.ndarray, member: Checkpoint) -> np.ndarray:
    """Per-class cosine scores of one model for one raw image embedding.

    No margin and no scale are applied: the margin is a training-time
    penalty only, and a positive scale cannot change the argmax.
    """
    emb = np.asarray(image_embedding)
    if emb.shape != (member.dim_joint,):
        raise ValueError(f"embedding shape {emb.shape} != (C={member.dim_joint},)")
    removed = remover_forward(emb, member.remover)
    rn = l2_normalize(removed)
    wn = l2_normalize(member.head.weights)
    return wn @ rn


def ensemble_predict(image_embedding: np.ndarray, bundle: EnsembleBundle) -> int:
    """Fused class prediction; ties go to the lowest class then member index."""
    score_rows = [predict_scores(image_embedding, m) for m in bundle.members]
    if bundle.fusion == "average":
        mean = np.mean(score_rows, axis=0)
        return int(np.argmax(mean))
    best_class, best_score = None, None
    for member_idx, scores in enumerate(score_rows):
        for class_idx, score in enumerate(scores):
            if best_score is None or score > best_score:
                best_score, best_class = score, class_idx
            elif score == best_score and class_idx < best_class:
                best_class = class_idx
    return int(best_class)


def zeroshot_predict(
    image_embedding: np.ndarray,
    backend: EncoderBackend,
    task: TaskDefinition,
    prompt_style: str = "PC",
) -> int:
    """Classify by cosine against class-name prompts ('C' or 'PC' pattern)."""
    if prompt_style not in ZEROSHOT_PATTERNS:
        raise ValueError(f"prompt_style must be one of {sorted(ZEROSHOT_PATTERNS)}")
    pattern = ZEROSHOT_PATTERNS[prompt_style]
    emb = l2_normalize(np.asarray(image_embedding))
    text = np.stack(
        [
            l2_normalize(backend.text_encode(pattern, name, None))
            for name in task.class_names
        ]
    )
    return int(np.argmax(text @ emb))


@dataclass(frozen=True)
class DatasetManifest:
    """Resolved (path, domain, class-name) rows grouped by domain."""

    entries: tuple[tuple[str, str, str], ...]  # (path, domain, class_name)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError("manifest is empty")

    @property
    def domains(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for _, domain, _ in self.entries:
            seen.setdefault(domain, None)
        return tuple(sorted(seen))

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(sorted({cls for _, _, cls in self.entries}))

    def validate_against(self, task: TaskDefinition) -> None:
        unknown = set(self.class_names) - set(task.class_names)
        if unknown:
            raise ValueError(f"manifest labels not in task: {sorted(unknown)}")


def manifest_from_directory(root) -> DatasetManifest:
    """Discover root/domain/class/image-file, sorted deterministically."""
    root = os.fspath(root)
    entries = []
    for domain in sorted(os.listdir(root)):
        domain_dir = os.path.join(root, domain)
        if not os.path.isdir(domain_dir):
            continue
        for cls in sorted(os.listdir(domain_dir)):
            cls_dir = os.path.join(domain_dir, cls)
            if not os.path.isdir(cls_dir):
                continue
            for name in sorted(os.listdir(cls_dir)):
                entries.append((os.path.join(cls_dir, name), domain, cls))
    return DatasetManifest(entries=tuple(entries))


def manifest_from_csv(path) -> DatasetManifest:
    """Load a delimited manifest: header 'path,domain,class', one row per image.

    Relative paths resolve against the manifest file's directory.
    """
    base = os.path.dirname(os.path.abspath(os.fspath(path)))
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "domain", "class"]:
            raise ValueError(f"{path}: manifest header must be 'path,domain,class'")
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: malformed manifest row {row!r}")
            p, domain, cls = (c.strip() for c in row)
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            entries.append((p, domain, cls))
    entries.sort()
    return DatasetManifest(entries=tuple(entries))


def load_manifest(path_or_root) -> DatasetManifest:
    p = os.fspath(path_or_root)
    if os.path.isdir(p):
        return manifest_from_directory(p)
    return manifest_from_csv(p)


@dataclass
class EvalReport:
    per_domain_accuracy: dict[str, float]  # percent
    per_domain_counts: dict[str, tuple[int, int]]  # (correct, total scored)
    average_accuracy: float
    decode_errors: int
    config_fingerprint: str = ""
    seed: int | None = None
    predictor: str = ""

    def to_dict(self) -> dict:
        return {
            "predictor": self.predictor,
            "per_domain_accuracy": {k: round(v, 4) for k, v in self.per_domain_accuracy.items()},
            "per_domain_counts": {k: list(v) for k, v in self.per_domain_counts.items()},
            "average_accuracy": round(self.average_accuracy, 4),
            "decode_errors": self.decode_errors,
            "config_fingerprint": self.config_fingerprint,
            "seed": self.seed,
        }

    def table(self) -> str:
        width = max(len("domain"), *(len(d) for d in self.per_domain_accuracy))
        lines = [f"{'domain':<{width}}  top-1 (%)  correct/total"]
        for domain in sorted(self.per_domain_accuracy):
            correct, total = self.per_domain_counts[domain]
            lines.append(
                f"{domain:<{width}}  {self.per_domain_accuracy[domain]:9.2f}  {correct}/{total}"
            )
        lines.append(f"{'average':<{width}}  {self.average_accuracy:9.2f}")
        if self.decode_errors:
            lines.append(f"decode errors: {self.decode_errors}")
        return "\n".join(lines)


def _default_loader(backend: EncoderBackend):
    if isinstance(backend, ToyBackend):
        return toy_image_load
    loader = getattr(backend, "load_image", None)
    if loader is None:
        raise ValueError(f"{type(backend).__name__} provides no image loader")
    return loader


def evaluate(
    manifest: DatasetManifest,
    backend: EncoderBackend,
    task: TaskDefinition,
    predict_fn,
    loader=None,
    config_fingerprint: str = "",
    seed: int | None = None,
    predictor_name: str = "",
) -> EvalReport:
    """Per-domain top-1 accuracy of ``predict_fn(raw_embedding)``.

    Iteration order is the manifest's sorted order; unreadable images
    are counted as decode errors and excluded from the accuracy.
    Embeddings are passed at encoder scale; predictors normalize where
    their scoring requires it.
    """
    manifest.validate_against(task)
    load = loader or _default_loader(backend)
    class_index = {name: i for i, name in enumerate(task.class_names)}
    correct: dict[str, int] = {}
    total: dict[str, int] = {}
    errors = 0
    for path, domain, cls in sorted(manifest.entries):
        try:
            image = load(path)
            embedding = backend.image_encode(image)
        except (ImageDecodeError, OSError):
            errors += 1
            continue
        predicted = predict_fn(embedding)
        total[domain] = total.get(domain, 0) + 1
        if predicted == class_index[cls]:
            correct[domain] = correct.get(domain, 0) + 1
    if not total:
        raise ValueError("no image in the manifest could be decoded")
    per_domain = {
        d: 100.0 * correct.get(d, 0) / total[d] for d in total
    }
    return EvalReport(
        per_domain_accuracy=per_domain,
        per_domain_counts={d: (correct.get(d, 0), total[d]) for d in total},
        average_accuracy=float(np.mean(list(per_domain.values()))),
        decode_errors=errors,
        config_fingerprint=config_fingerprint,
        seed=seed,
        predictor=predictor_name,
    )


def export_embeddings(
    manifest: DatasetManifest,
    backend: EncoderBackend,
    checkpoint: Checkpoint | None,
    path,
    loader=None,
) -> int:
    """Write per-image raw (and optionally removed) embeddings as CSV.

    Returns the number of rows written; decode failures are skipped.
    Floats use 9 significant digits.
    """
    load = loader or _default_loader(backend)
    C = backend.dim_joint
    columns = ["path", "domain", "class"] + [f"raw_{i}" for i in range(C)]
    if checkpoint is not None:
        columns += [f"removed_{i}" for i in range(C)]
    rows = 0
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for img_path, domain, cls in sorted(manifest.entries):
                try:
                    image = load(img_path)
                    raw = backend.image_encode(image)
                except (ImageDecodeError, OSError):
                    continue
                row = [img_path, domain, cls] + [f"{x:.9g}" for x in raw]
                if checkpoint is not None:
                    removed = remover_forward(raw, checkpoint.remover)
                    row += [f"{x:.9g}" for x in removed]
                writer.writerow(row)
                rows += 1
    except OSError as exc:
        raise OSError(f"failed writing embeddings to {path}: {exc}") from exc
    return rows
