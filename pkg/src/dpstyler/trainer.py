"""One-stage training loop over text prompts, plus checkpoint persistence.

Each epoch: refresh the style bank, re-encode the K style prompts (the
domain probe) and all M*K class-prompt features, then run SGD with
momentum over shuffled batches, updating only the removal gate and the
classifier head.  The encoder is frozen, so every (class, style) pair is
encoded exactly once per epoch and cached.

A full run is a deterministic function of (task, backend seed, config),
and the resulting checkpoint round-trips bit-exactly through the binary
format documented at ``save_checkpoint``.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .backends import EncoderBackend
from .core import DEFAULT_DTYPE, PromptTemplate, TaskDefinition, l2_normalize
from .losses import ArcFaceConfig, ClassifierHead, DomainProbe, head_init, loss_gradients
from .remover import StyleRemoverParams, remover_backward, remover_forward, remover_init
from .styles import (
    PredefinedLexicon,
    StyleBank,
    StyleGenConfig,
    default_lexicon,
    initial_bank,
    refresh_bank,
)

CHECKPOINT_MAGIC = b"DPSTYLR1"
CHECKPOINT_VERSION = 1

# RNG stream tags under the master seed.
_STREAM_REMOVER_INIT = 10
_STREAM_HEAD_INIT = 11
_STREAM_SHUFFLE = 12


class TrainingDivergedError(RuntimeError):
    """Raised when a loss turns non-finite; carries (epoch, batch, parts)."""

    def __init__(self, epoch: int, batch: int, loss_u: float, loss_c: float):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}: "
            f"L_U={loss_u}, L_C={loss_c}"
        )
        self.epoch = epoch
        self.batch = batch


class CheckpointError(ValueError):
    """Raised for unreadable, truncated, or inconsistent checkpoint files."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.008
    momentum: float = 0.9
    batch_size: int = 128
    ratio: int = 16
    style_gen: StyleGenConfig = field(default_factory=StyleGenConfig)
    arcface: ArcFaceConfig = field(default_factory=ArcFaceConfig)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def num_styles(self) -> int:
        return self.style_gen.num_styles


@dataclass
class Checkpoint:
    remover: StyleRemoverParams
    head: ClassifierHead
    template_id: str
    template_pattern: str
    class_names: tuple[str, ...]
    dim_joint: int
    dim_token: int
    backend_tag: str
    seed: int
    config_snapshot: dict = field(default_factory=dict)


@dataclass
class EpochMetrics:
    epoch: int
    loss_uncertainty: float
    loss_classification: float
    loss_total: float
    wall_time_s: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "loss_uncertainty": round(self.loss_uncertainty, 6),
                "loss_classification": round(self.loss_classification, 6),
                "loss_total": round(self.loss_total, 6),
                "wall_time_s": round(self.wall_time_s, 4),
            }
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[EpochMetrics]
    final_bank: StyleBank


def build_prompt_set(
    task: TaskDefinition, bank: StyleBank, seed: int, epoch: int
) -> list[tuple[int, int]]:
    """Full (class, style) cross product, shuffled with the epoch's RNG."""
    pairs = [(m, i) for m in range(task.num_classes) for i in range(bank.num_styles)]
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_SHUFFLE, epoch]))
    return [pairs[j] for j in rng.permutation(len(pairs))]


def sgd_step(
    param: np.ndarray,
    grad: np.ndarray,
    learning_rate: float,
    momentum: float,
    velocity: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Classical momentum: v <- mu*v - lr*g; p <- p + v."""
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise ValueError("param, grad, and velocity shapes must match")
    velocity = momentum * velocity - learning_rate * grad
    return param + velocity, velocity


def _encode_epoch_features(
    backend: EncoderBackend,
    task: TaskDefinition,
    bank: StyleBank,
    template: PromptTemplate,
) -> np.ndarray:
    """Every (class, style) prompt feature for one epoch.

    Features stay at their raw encoder scale: the losses are cosine-based
    and normalize internally, while the removal gate sees (and should see)
    the encoder's native magnitudes.
    """
    M, K, C = task.num_classes, bank.num_styles, backend.dim_joint
    feats = np.empty((M, K, C), dtype=DEFAULT_DTYPE)
    for m, name in enumerate(task.class_names):
        for i in range(K):
            feats[m, i] = backend.text_encode(template.pattern, name, bank.styles[i])
    return feats


def encode_probe(backend: EncoderBackend, bank: StyleBank) -> DomainProbe:
    rows = np.stack(
        [l2_normalize(backend.style_text_encode(s)) for s in bank.styles]
    ).astype(DEFAULT_DTYPE)
    return DomainProbe(style_text_features=rows)


def train_one_model(
    task: TaskDefinition,
    backend: EncoderBackend,
    template: PromptTemplate,
    config: TrainConfig,
    lexicon: PredefinedLexicon | None = None,
    backend_tag: str = "toy",
    config_snapshot: dict | None = None,
) -> TrainResult:
    """Train remover + head for one prompt template; returns the checkpoint."""
    C, D = backend.dim_joint, backend.dim_token
    if config.style_gen.strategy in ("stylemix", "random_mix") and lexicon is None:
        lexicon = default_lexicon(backend)
    remover = remover_init(
        C,
        config.ratio,
        np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_REMOVER_INIT])),
    )
    head = head_init(
        task.num_classes,
        C,
        np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_HEAD_INIT])),
    )
    vel_w1 = np.zeros_like(remover.W1)
    vel_w2 = np.zeros_like(remover.W2)
    vel_head = np.zeros_like(head.weights)

    bank = initial_bank(config.style_gen, D, lexicon)
    metrics: list[EpochMetrics] = []

    for epoch in range(config.epochs):
        start = time.perf_counter()
        bank = refresh_bank(bank, config.style_gen, epoch, lexicon)
        probe = encode_probe(backend, bank)
        feats = _encode_epoch_features(backend, task, bank, template)

        order = build_prompt_set(task, bank, config.seed, epoch)
        targets_all = np.array([m for m, _ in order])
        features_all = np.stack([feats[m, i] for m, i in order])

        sum_u = sum_c = 0.0
        n_samples = len(order)
        for batch_idx, start_idx in enumerate(range(0, n_samples, config.batch_size)):
            v = features_all[start_idx : start_idx + config.batch_size]
            y = targets_all[start_idx : start_idx + config.batch_size]
            removed = remover_forward(v, remover)
            if not np.all(np.isfinite(removed)):
                raise TrainingDivergedError(epoch, batch_idx, float("nan"), float("nan"))
            breakdown = loss_gradients(removed, probe, head, y, config.arcface)
            if not (
                np.isfinite(breakdown.loss_uncertainty)
                and np.isfinite(breakdown.loss_classification)
            ):
                raise TrainingDivergedError(
                    epoch, batch_idx, breakdown.loss_uncertainty, breakdown.loss_classification
                )
            _, d_w1, d_w2 = remover_backward(v, remover, breakdown.d_features)
            remover.W1, vel_w1 = sgd_step(
                remover.W1, d_w1, config.learning_rate, config.momentum, vel_w1
            )
            remover.W2, vel_w2 = sgd_step(
                remover.W2, d_w2, config.learning_rate, config.momentum, vel_w2
            )
            head.weights, vel_head = sgd_step(
                head.weights, breakdown.d_head, config.learning_rate, config.momentum, vel_head
            )
            weight = len(y)
            sum_u += breakdown.loss_uncertainty * weight
            sum_c += breakdown.loss_classification * weight

        mean_u, mean_c = sum_u / n_samples, sum_c / n_samples
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                loss_uncertainty=mean_u,
                loss_classification=mean_c,
                loss_total=mean_u + mean_c,
                wall_time_s=time.perf_counter() - start,
            )
        )

    checkpoint = Checkpoint(
        remover=remover,
        head=head,
        template_id=template.id,
        template_pattern=template.pattern,
        class_names=task.class_names,
        dim_joint=C,
        dim_token=D,
        backend_tag=backend_tag,
        seed=config.seed,
        config_snapshot=config_snapshot or {},
    )
    return TrainResult(checkpoint=checkpoint, metrics=metrics, final_bank=bank)


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Write the binary checkpoint format.

    Layout: 8-byte magic ``DPSTYLR1``; 4-byte little-endian header
    length; UTF-8 JSON header (version, dims, ratio, template, class
    names, backend tag, seed, array manifest with shapes and offsets);
    then the raw float32 little-endian arrays W1, W2, head in manifest
    order.  Offsets are relative to the end of the header.
    """
    arrays = [
        ("W1", np.ascontiguousarray(checkpoint.remover.W1, dtype="<f4")),
        ("W2", np.ascontiguousarray(checkpoint.remover.W2, dtype="<f4")),
        ("head", np.ascontiguousarray(checkpoint.head.weights, dtype="<f4")),
    ]
    manifest = []
    offset = 0
    for name, arr in arrays:
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "dim_joint": checkpoint.dim_joint,
        "dim_token": checkpoint.dim_token,
        "ratio": checkpoint.remover.ratio,
        "num_classes": checkpoint.head.num_classes,
        "template_id": checkpoint.template_id,
        "template_pattern": checkpoint.template_pattern,
        "class_names": list(checkpoint.class_names),
        "backend_tag": checkpoint.backend_tag,
        "seed": checkpoint.seed,
        "config": checkpoint.config_snapshot,
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in arrays:
            fh.write(arr.tobytes())


def load_checkpoint(path) -> Checkpoint:
    """Read and validate a checkpoint written by ``save_checkpoint``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 4:
        raise CheckpointError(f"{path}: truncated file")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (header_len,) = struct.unpack_from("<I", blob, len(CHECKPOINT_MAGIC))
    body_start = len(CHECKPOINT_MAGIC) + 4 + header_len
    if len(blob) < body_start:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[len(CHECKPOINT_MAGIC) + 4 : body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    version = header.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {version!r} (expected {CHECKPOINT_VERSION})"
        )

    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4
        start = body_start + entry["offset"]
        chunk = blob[start : start + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()

    C, ratio = header["dim_joint"], header["ratio"]
    hidden = C // ratio
    try:
        W1, W2, head_w = arrays["W1"], arrays["W2"], arrays["head"]
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing array {exc}") from exc
    if W1.shape != (C, hidden) or W2.shape != (hidden, C):
        raise CheckpointError(
            f"{path}: gate shapes {W1.shape}/{W2.shape} inconsistent with C={C}, r={ratio}"
        )
    if head_w.shape != (header["num_classes"], C):
        raise CheckpointError(f"{path}: head shape {head_w.shape} inconsistent")
    if len(header["class_names"]) != header["num_classes"]:
        raise CheckpointError(f"{path}: class-name count != num_classes")

    return Checkpoint(
        remover=StyleRemoverParams(W1=W1, W2=W2, ratio=ratio),
        head=ClassifierHead(weights=head_w),
        template_id=header["template_id"],
        template_pattern=header["template_pattern"],
        class_names=tuple(header["class_names"]),
        dim_joint=C,
        dim_token=header["dim_token"],
        backend_tag=header["backend_tag"],
        seed=header["seed"],
        config_snapshot=header.get("config", {}),
    )
