"""Multi-layer toy-transformer prefill over dense or pruned attention.

The block is attention-only: no MLP, no normalization, residual behind a
flag. Everything the estimator and pruner need to prove out lives inside
self-attention, so extra sublayers would just add noise to comparisons.
Layers run sequentially because each layer's criticality estimate blends
with the previous layer's; that chain is owned here, per head.

Also owns the on-disk model format (manifest.json plus raw little-endian
blobs with per-tensor checksums) and seeded synthetic model generation.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attn_core import (
    AttentionOutput,
    ConfigError,
    HeadGeometry,
    multi_head_dense_attention,
    project,
    require_matrix,
    split_heads,
)
from .criticality import (
    CriticalityMatrix,
    estimate_criticality,
    segment_representatives,
)
from .flops import FlopReport, count_flops
from .pruned_attn import PrunedAttnConfig, dense_fallback_policy, pruned_attention
from .rng import SUBSTREAM_INPUTS, SUBSTREAM_WEIGHTS, RngSpec

FORMAT_VERSION = 1
_WIDTH_TO_DTYPE = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class ModelLoadError(RuntimeError):
    """A model directory failed validation; the message names the entry."""


@dataclass
class LayerWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray


@dataclass
class ModelBundle:
    """Per-layer projection weights plus geometry and element width."""

    layers: list[LayerWeights]
    geometry: HeadGeometry
    element_width: str = "f32"

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def validate(self) -> None:
        if self.element_width not in _WIDTH_TO_DTYPE:
            raise ConfigError(f"unknown element width: {self.element_width}")
        dim = self.geometry.model_dim
        for i, layer in enumerate(self.layers):
            for name, w in (("w_q", layer.w_q), ("w_k", layer.w_k), ("w_v", layer.w_v)):
                require_matrix(f"layer{i}.{name}", w)
                if w.shape != (dim, dim):
                    raise ConfigError(
                        f"layer{i}.{name} has shape {w.shape}, expected ({dim}, {dim})"
                    )


@dataclass
class PrefillResult:
    hidden: np.ndarray
    # One entry per layer; None for layers that ran the dense path.
    layer_scores: list[list[CriticalityMatrix] | None]
    flops: FlopReport
    per_layer_seconds: list[float]
    mode: str
    # Pre-fusion scores, recorded only when requested (verification).
    raw_scores: list[list[CriticalityMatrix] | None] | None = None
    # Hidden states after each layer, recorded only when requested.
    layer_hidden: list[np.ndarray] | None = None


def gen_synthetic_model(
    geom: HeadGeometry,
    n_layers: int,
    rng: RngSpec,
    element_width: str = "f32",
) -> ModelBundle:
    """Seeded random model: i.i.d. normal weights scaled by 1/sqrt(model_dim).

    The scaling keeps hidden-state magnitudes near order one across
    layers, so numeric tolerances mean the same thing at every depth.
    Draw order is fixed (layer-major, then w_q, w_k, w_v), making the
    bundle a pure function of the seed.
    """
    if n_layers < 1:
        raise ConfigError("n_layers must be >= 1")
    dtype = _WIDTH_TO_DTYPE[element_width] if element_width in _WIDTH_TO_DTYPE else None
    if dtype is None:
        raise ConfigError(f"unknown element width: {element_width}")
    stream = rng.stream(SUBSTREAM_WEIGHTS)
    dim = geom.model_dim
    scale = 1.0 / np.sqrt(dim)
    layers = []
    for _ in range(n_layers):
        mats = [
            (stream.normal_matrix(dim, dim) * scale).astype(dtype) for _ in range(3)
        ]
        layers.append(LayerWeights(*mats))
    return ModelBundle(layers=layers, geometry=geom, element_width=element_width)


def gen_synthetic_inputs(
    n_tokens: int, geom: HeadGeometry, rng: RngSpec, element_width: str = "f32"
) -> np.ndarray:
    """Seeded standard-normal hidden states, (n_tokens, model_dim)."""
    if element_width not in _WIDTH_TO_DTYPE:
        raise ConfigError(f"unknown element width: {element_width}")
    stream = rng.stream(SUBSTREAM_INPUTS)
    x = stream.normal_matrix(n_tokens, geom.model_dim)
    return x.astype(_WIDTH_TO_DTYPE[element_width])


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    """Write manifest.json plus a single weights.bin blob file."""
    bundle.validate()
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    dtype = _WIDTH_TO_DTYPE[bundle.element_width]

    tensors = []
    blob = bytearray()
    for i, layer in enumerate(bundle.layers):
        for name, w in (("w_q", layer.w_q), ("w_k", layer.w_k), ("w_v", layer.w_v)):
            raw = np.ascontiguousarray(w, dtype=dtype).tobytes()
            tensors.append(
                {
                    "name": f"layer{i}.{name}",
                    "shape": list(w.shape),
                    "file": "weights.bin",
                    "byte_offset": len(blob),
                    "byte_length": len(raw),
                    "crc32": zlib.crc32(raw),
                }
            )
            blob.extend(raw)

    manifest = {
        "format_version": FORMAT_VERSION,
        "layers": bundle.n_layers,
        "n_heads": bundle.geometry.n_heads,
        "head_dim": bundle.geometry.head_dim,
        "element_width": bundle.element_width,
        "byte_order": "little",
        "tensors": tensors,
    }
    (out / "weights.bin").write_bytes(bytes(blob))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_model(path: str | Path) -> ModelBundle:
    """Load and validate a model directory; bitwise round-trip of save_model."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ModelLoadError(f"missing manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())

    if manifest.get("format_version") != FORMAT_VERSION:
        raise ModelLoadError(
            f"unsupported format_version: {manifest.get('format_version')}"
        )
    width = manifest.get("element_width")
    if width not in _WIDTH_TO_DTYPE:
        raise ModelLoadError(f"unknown element width: {width}")
    if manifest.get("byte_order") != "little":
        raise ModelLoadError(f"unsupported byte order: {manifest.get('byte_order')}")
    dtype = _WIDTH_TO_DTYPE[width]
    geom = HeadGeometry(n_heads=manifest["n_heads"], head_dim=manifest["head_dim"])
    dim = geom.model_dim

    by_name = {t["name"]: t for t in manifest["tensors"]}
    files: dict[str, bytes] = {}
    layers = []
    for i in range(manifest["layers"]):
        mats = {}
        for name in ("w_q", "w_k", "w_v"):
            key = f"layer{i}.{name}"
            entry = by_name.get(key)
            if entry is None:
                raise ModelLoadError(f"manifest has no tensor entry for {key}")
            if tuple(entry["shape"]) != (dim, dim):
                raise ModelLoadError(
                    f"{key} has shape {entry['shape']}, geometry wants ({dim}, {dim})"
                )
            if entry["byte_length"] != dim * dim * dtype.itemsize:
                raise ModelLoadError(f"{key} byte_length does not match its shape")
            fname = entry["file"]
            if fname not in files:
                fpath = root / fname
                if not fpath.is_file():
                    raise ModelLoadError(f"missing blob file {fname} for {key}")
                files[fname] = fpath.read_bytes()
            lo = entry["byte_offset"]
            hi = lo + entry["byte_length"]
            chunk = files[fname][lo:hi]
            if len(chunk) != entry["byte_length"] or zlib.crc32(chunk) != entry["crc32"]:
                raise ModelLoadError(f"checksum failure for {key} (truncated or corrupt)")
            mats[name] = (
                np.frombuffer(chunk, dtype=dtype).reshape(dim, dim).copy()
            )
        layers.append(LayerWeights(mats["w_q"], mats["w_k"], mats["w_v"]))

    bundle = ModelBundle(layers=layers, geometry=geom, element_width=width)
    bundle.validate()
    return bundle


def prefill(
    model: ModelBundle,
    x0: np.ndarray,
    cfg: PrunedAttnConfig,
    mode: str = "dense",
    residual: bool = False,
    allow_fallback: bool = True,
    keep_raw_scores: bool = False,
    keep_layer_outputs: bool = False,
) -> PrefillResult:
    """Run every layer's projection and attention over all tokens.

    In pruned mode each layer estimates per-head criticality (blending
    with the same head's scores from the layer before) and attends
    block-sparsely; in dense mode, or when the fallback policy says
    pruning cannot help, it attends densely. `allow_fallback=False`
    forces the pruned path even where the policy would decline it,
    which is how full-budget equivalence gets exercised for real.
    """
    if mode not in ("dense", "pruned"):
        raise ConfigError(f"unknown mode: {mode}")
    require_matrix("x0", x0)
    geom = model.geometry
    if x0.shape[1] != geom.model_dim:
        raise ConfigError(
            f"x0 has {x0.shape[1]} columns, model wants {geom.model_dim}"
        )
    n = x0.shape[0]
    x = x0.astype(_WIDTH_TO_DTYPE[model.element_width], copy=False)
    scale = cfg.attention_scale(geom.head_dim)

    run_pruned = mode == "pruned" and (
        not allow_fallback or not dense_fallback_policy(n, cfg)
    )

    prev_scores: list[CriticalityMatrix] | None = None
    layer_scores: list[list[CriticalityMatrix] | None] = []
    raw_scores: list[list[CriticalityMatrix] | None] | None = (
        [] if keep_raw_scores else None
    )
    layer_hidden: list[np.ndarray] | None = [] if keep_layer_outputs else None
    per_layer_seconds: list[float] = []

    for layer in model.layers:
        t0 = time.perf_counter()
        q, k, v = project(x, layer.w_q, layer.w_k, layer.w_v)
        if run_pruned:
            head_outputs = []
            fused_per_head: list[CriticalityMatrix] = []
            raw_per_head: list[CriticalityMatrix] = []
            q_heads = split_heads(q, geom)
            k_heads = split_heads(k, geom)
            v_heads = split_heads(v, geom)
            for h in range(geom.n_heads):
                reps = segment_representatives(
                    q_heads[h], cfg.segment_size, k_heads[h], cfg.block_size
                )
                s_prev = prev_scores[h] if prev_scores is not None else None
                fused = estimate_criticality(
                    reps, s_prev, alpha=cfg.alpha, scale_logits=cfg.scale_logits
                )
                if keep_raw_scores:
                    raw_per_head.append(
                        estimate_criticality(
                            reps, None, alpha=cfg.alpha, scale_logits=cfg.scale_logits
                        )
                    )
                out, _ = pruned_attention(
                    q_heads[h], k_heads[h], v_heads[h], fused, cfg
                )
                head_outputs.append(out)
                fused_per_head.append(fused)
            prev_scores = fused_per_head
            layer_scores.append(fused_per_head)
            if raw_scores is not None:
                raw_scores.append(raw_per_head)
            attn = AttentionOutput(head_outputs).merged()
        else:
            attn = multi_head_dense_attention(q, k, v, geom, scale).merged()
            layer_scores.append(None)
            if raw_scores is not None:
                raw_scores.append(None)
        x = x + attn if residual else attn
        if layer_hidden is not None:
            layer_hidden.append(x)
        per_layer_seconds.append(time.perf_counter() - t0)

    report = count_flops(n, model.n_layers, geom, cfg, mode=mode)
    return PrefillResult(
        hidden=x,
        layer_scores=layer_scores,
        flops=report,
        per_layer_seconds=per_layer_seconds,
        mode=mode,
        raw_scores=raw_scores,
        layer_hidden=layer_hidden,
    )
