"""Frozen joint vision-language encoder backends.

The rest of the pipeline only needs four operations from a backend:
encode a class prompt (with a style vector injected at the style token's
position), encode a style-only prompt, encode an image, and look up a
word's token embedding.  Backends are immutable after construction; no
operation mutates them.

Two backends live here:

- ``ToyBackend``: a seeded linear construction for desk-scale tests.
  Text features are ``l2(content(class, template) + V @ l2(style))`` and
  image features ``l2(content_img(class) + V @ l2(nuisance) + noise)``,
  where the content maps share a common per-class base vector and the
  style subspace ``V`` is shared between modalities.  This gives the
  removal gate a real style signal to suppress while keeping classes
  linearly separable.
- ``RealBackendAdapter``: the contract a pretrained-encoder wrapper must
  satisfy (joint dim per model variant, token dim 512, weights loaded
  from an external path).  No pretrained weights ship with the package.
"""

from __future__ import annotations

import abc
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_DTYPE, STYLE_PLACEHOLDER, l2_normalize

STYLE_ONLY_PATTERN = f"{STYLE_PLACEHOLDER}-like style"

# Joint embedding dims of the supported pretrained variants; token dim is 512.
REAL_BACKEND_JOINT_DIMS = {"resnet50": 1024, "vit-b16": 512, "vit-l14": 768}
REAL_BACKEND_TOKEN_DIM = 512


class EncodeError(ValueError):
    """Raised when a prompt or image cannot be encoded."""


class ImageDecodeError(ValueError):
    """Raised for malformed image records."""


class EncoderBackend(abc.ABC):
    """Frozen text/image encoder pair sharing one joint embedding space."""

    capabilities: frozenset[str] = frozenset({"text", "image", "token_lookup"})

    @property
    @abc.abstractmethod
    def dim_joint(self) -> int:
        """C: dimensionality of the joint vision-language space."""

    @property
    @abc.abstractmethod
    def dim_token(self) -> int:
        """D: dimensionality of the token word-embedding space."""

    @abc.abstractmethod
    def text_encode(
        self, pattern: str, class_name: str, style: np.ndarray | None = None
    ) -> np.ndarray:
        """Encode a filled prompt, injecting ``style`` at the style token."""

    @abc.abstractmethod
    def style_text_encode(self, style: np.ndarray) -> np.ndarray:
        """Encode the style-only prompt for one style vector."""

    @abc.abstractmethod
    def image_encode(self, image) -> np.ndarray:
        """Encode a decoded image into the joint space."""

    @abc.abstractmethod
    def token_embedding_lookup(self, word: str) -> np.ndarray:
        """Embedding-table row for a single-token word."""


def _digest_ints(*parts: str) -> list[int]:
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return [int.from_bytes(h[i : i + 8], "little") for i in range(0, 32, 8)]


@dataclass(frozen=True)
class ToyBackendSpec:
    dim_joint: int = 64
    dim_token: int = 32
    max_classes: int = 16
    noise_level: float = 0.1
    # Norm of the style term relative to the unit-norm content term; >1
    # makes features style-dominated, as real encoder features are.
    style_strength: float = 1.0
    # Norm of every emitted feature.  Downstream losses are cosine-based
    # and therefore scale-invariant, but gradients through the removal
    # gate grow with the feature norm, so a realistic (pretrained joint
    # encoders emit features with norms in the tens) magnitude is needed
    # for the gate to train within desk-scale step budgets.
    output_gain: float = 32.0
    seed: int = 0


@dataclass(frozen=True)
class ToyImage:
    """A synthetic image: a class index plus a D-dim nuisance style vector.

    ``content_strength`` models how much the stylization obscures the
    class evidence: 1.0 is a clean depiction, smaller values fade the
    content relative to the style and noise.
    """

    class_index: int
    nuisance: np.ndarray  # (D,)
    content_strength: float = 1.0


def toy_image_load(path) -> ToyImage:
    """Decode a synthetic-image record file (JSON with class_index, nuisance)."""
    try:
        with open(path, encoding="utf-8") as fh:
            record = json.load(fh)
        idx = int(record["class_index"])
        nuisance = np.asarray(record["nuisance"], dtype=DEFAULT_DTYPE)
        strength = float(record.get("content_strength", 1.0))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ImageDecodeError(f"malformed toy image {path}: {exc}") from exc
    if nuisance.ndim != 1:
        raise ImageDecodeError(f"malformed toy image {path}: nuisance must be 1-D")
    return ToyImage(class_index=idx, nuisance=nuisance, content_strength=strength)


def toy_image_save(image: ToyImage, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "class_index": image.class_index,
                "nuisance": [float(x) for x in image.nuisance],
                "content_strength": image.content_strength,
            },
            fh,
        )


class ToyBackend(EncoderBackend):
    """Deterministic linear test double for the frozen encoder pair.

    All frozen matrices are regenerated on demand from (spec, seed) via
    hashed seed sequences, so identically-configured backends produce
    bit-identical features across processes.
    """

    # Relative weight of per-template / per-modality content perturbations.
    PERTURBATION = 0.1

    def __init__(self, spec: ToyBackendSpec, class_names):
        self.spec = spec
        self.class_names = tuple(class_names)
        if len(self.class_names) > spec.max_classes:
            raise ValueError(
                f"{len(self.class_names)} classes exceed max_classes={spec.max_classes}"
            )
        C, D = spec.dim_joint, spec.dim_token
        scale = 1.0 / np.sqrt(C)
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, *_digest_ints("style-subspace")])
        )
        # Shared style subspace between text and image modalities.  Style
        # feeds only the upper half of the channels (content stays dense
        # over all of them), so style information is channel-coded and a
        # per-channel gate has something real to suppress.
        block = C // 2
        V = np.zeros((C, D))
        V[block:] = rng.standard_normal((C - block, D)) / np.sqrt(C - block)
        self._V = V.astype(DEFAULT_DTYPE)
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, *_digest_ints("style-prompt-base")])
        )
        self._style_prompt_base = (rng.standard_normal(C) * scale).astype(DEFAULT_DTYPE)

    @property
    def dim_joint(self) -> int:
        return self.spec.dim_joint

    @property
    def dim_token(self) -> int:
        return self.spec.dim_token

    def _content_vector(self, tag: str, class_name: str) -> np.ndarray:
        """Base per-class vector plus a small context-specific perturbation."""
        C = self.spec.dim_joint
        scale = 1.0 / np.sqrt(C)
        base_rng = np.random.default_rng(
            np.random.SeedSequence([self.spec.seed, *_digest_ints("content", class_name)])
        )
        base = base_rng.standard_normal(C) * scale
        pert_rng = np.random.default_rng(
            np.random.SeedSequence([self.spec.seed, *_digest_ints("pert", tag, class_name)])
        )
        pert = pert_rng.standard_normal(C) * scale
        return (base + self.PERTURBATION * pert).astype(DEFAULT_DTYPE)

    def _check_style(self, style: np.ndarray) -> np.ndarray:
        style = np.asarray(style)
        if style.shape != (self.spec.dim_token,):
            raise ValueError(
                f"style vector length {style.shape} != D={self.spec.dim_token}"
            )
        return style

    def text_encode(
        self, pattern: str, class_name: str, style: np.ndarray | None = None
    ) -> np.ndarray:
        if not class_name or class_name != class_name.strip():
            raise EncodeError(f"invalid class name {class_name!r}")
        feature = self._content_vector("text:" + pattern, class_name)
        if STYLE_PLACEHOLDER in pattern:
            if style is None:
                raise ValueError("pattern has a style slot but no style was given")
            feature = feature + self._style_term(style)
        return (self.spec.output_gain * l2_normalize(feature)).astype(DEFAULT_DTYPE)

    def _style_term(self, style: np.ndarray) -> np.ndarray:
        """Projection of a (direction-normalized) style into the joint space.

        A zero style vector contributes nothing rather than erroring,
        so the style path can be switched off in tests.
        """
        style = self._check_style(style).astype(np.float64)
        norm = float(np.linalg.norm(style))
        if norm < 1e-12:
            return np.zeros(self.spec.dim_joint, dtype=DEFAULT_DTYPE)
        return (self.spec.style_strength * (self._V @ (style / norm))).astype(DEFAULT_DTYPE)

    def style_text_encode(self, style: np.ndarray) -> np.ndarray:
        feature = self._style_prompt_base + self._style_term(style)
        return (self.spec.output_gain * l2_normalize(feature)).astype(DEFAULT_DTYPE)

    def image_encode(self, image) -> np.ndarray:
        if not isinstance(image, ToyImage):
            raise ImageDecodeError(f"toy backend cannot decode {type(image).__name__}")
        if not 0 <= image.class_index < len(self.class_names):
            raise ImageDecodeError(
                f"class index {image.class_index} outside task with "
                f"{len(self.class_names)} classes"
            )
        nuisance = np.asarray(image.nuisance, dtype=DEFAULT_DTYPE)
        if nuisance.shape != (self.spec.dim_token,):
            raise ImageDecodeError(
                f"nuisance length {nuisance.shape} != D={self.spec.dim_token}"
            )
        class_name = self.class_names[image.class_index]
        feature = image.content_strength * self._content_vector("image", class_name).astype(
            np.float64
        )
        nuisance_norm = float(np.linalg.norm(nuisance))
        if nuisance_norm > 1e-12:
            feature = feature + self.spec.style_strength * (
                self._V @ (nuisance / nuisance_norm)
            )
        if self.spec.noise_level > 0:
            digest = hashlib.sha256(
                nuisance.tobytes() + image.class_index.to_bytes(4, "little")
            ).digest()
            seed_ints = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
            rng = np.random.default_rng(np.random.SeedSequence([self.spec.seed, *seed_ints]))
            noise = rng.standard_normal(self.spec.dim_joint) * (
                self.spec.noise_level / np.sqrt(self.spec.dim_joint)
            )
            feature = feature + noise
        return (self.spec.output_gain * l2_normalize(feature)).astype(DEFAULT_DTYPE)

    def style_preimage(self, target: np.ndarray) -> np.ndarray:
        """Least-squares nuisance whose style term best matches ``target``.

        Test-data hook: lets dataset builders craft domain styles that
        alias a given joint-space direction (e.g. another class's
        content), which is how real stylization confuses classifiers.
        """
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (self.spec.dim_joint,):
            raise ValueError(f"target shape {target.shape} != (C={self.spec.dim_joint},)")
        sol, *_ = np.linalg.lstsq(self._V.astype(np.float64), target, rcond=None)
        return sol.astype(DEFAULT_DTYPE)

    def class_content_direction(self, class_name: str) -> np.ndarray:
        """The image-modality content vector for a class (test-data hook)."""
        return self._content_vector("image", class_name)

    def token_embedding_lookup(self, word: str) -> np.ndarray:
        if not word or len(word.split()) != 1:
            raise ValueError(f"lexicon words must be single tokens, got {word!r}")
        rng = np.random.default_rng(
            np.random.SeedSequence([self.spec.seed, *_digest_ints("token", word)])
        )
        return rng.standard_normal(self.spec.dim_token).astype(DEFAULT_DTYPE)


class RealBackendAdapter(EncoderBackend):
    """Contract for wrapping a pretrained joint encoder.

    Subclasses load frozen weights from ``weights_path`` and must expose
    the four encode operations with the variant's joint dim and token
    dim 512.  Image inputs follow the standard preprocessing contract:
    RGB, resized to 224x224, per-channel normalization with the
    pretrained model's published mean/std.
    """

    def __init__(self, variant: str, weights_path: str):
        if variant not in REAL_BACKEND_JOINT_DIMS:
            raise ValueError(
                f"unknown variant {variant!r}; expected one of {sorted(REAL_BACKEND_JOINT_DIMS)}"
            )
        self.variant = variant
        self.weights_path = weights_path

    @property
    def dim_joint(self) -> int:
        return REAL_BACKEND_JOINT_DIMS[self.variant]

    @property
    def dim_token(self) -> int:
        return REAL_BACKEND_TOKEN_DIM
