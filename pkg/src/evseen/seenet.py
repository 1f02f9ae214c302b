"""Prompt-conditioned brightness adjustment network, desk scale.

Architecture: per-pixel linear heads lift the image and the event voxel grid
(each concatenated with a positional/Bayer feature) to a shared width; a
cross-attention block fuses them, and a weight-shared two-block loop refines the
fused feature into the broad light-range representation; a scalar brightness
prompt is embedded to a channel vector and merged into every layer of a
pixel-wise MLP decoder.  Training minimizes a Charbonnier image term plus an L1
forward-difference gradient term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bayer import BayerOrder
from .events import VoxelGrid, position_embedding, voxelize
from .imaging import RgbImage, brightness

__all__ = [
    "SeeNetConfig",
    "SeeNetParams",
    "BrightnessPrompt",
    "BlrFeature",
    "CALIBRATION_CONFIG",
    "init_params",
    "input_heads",
    "cross_attention",
    "encode",
    "prompt_embed",
    "decode",
    "loss",
    "forward",
    "train_toy",
    "parameter_count",
]

LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class SeeNetConfig:
    channels: int = 16
    heads: int = 2
    loop_count: int = 4
    decoder_layers: int = 5
    voxel_bins: int = 8
    pos_dim: int = 8
    lambda1: float = 1.0
    lambda2: float = 0.5
    epsilon: float = 1e-3
    prompt_merge: str = "add"
    bayer: str = "RGGB"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.channels % self.heads:
            raise ValueError("channels must be divisible by heads")
        if self.loop_count < 1:
            raise ValueError("loop_count must be >= 1")
        if self.decoder_layers < 2:
            raise ValueError("decoder needs at least 2 layers")
        if self.pos_dim < 3:
            raise ValueError("pos_dim must be >= 3")
        if self.voxel_bins < 1:
            raise ValueError("voxel_bins must be >= 1")
        if self.prompt_merge not in ("add", "multiply"):
            raise ValueError("prompt_merge must be 'add' or 'multiply'")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        BayerOrder(self.bayer)


# reconstruction of the full-scale configuration; lands near 1.9M parameters
CALIBRATION_CONFIG = SeeNetConfig(
    channels=248, heads=8, loop_count=20, voxel_bins=16, pos_dim=16
)


@dataclass(frozen=True)
class BrightnessPrompt:
    value: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.value < 1.0:
            raise ValueError(f"brightness prompt must lie in (0, 1), got {self.value}")


@dataclass
class BlrFeature:
    """Broad light-range representation: the encoder's final H x W x C feature."""

    tensor: Tensor


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class AttentionBlockParams:
    ln_q: LayerNormParams
    ln_kv: LayerNormParams
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wo: LinearParams
    ln_ff: LayerNormParams
    ff1: LinearParams
    ff2: LinearParams


@dataclass
class SeeNetParams:
    head_event_1: LinearParams
    head_event_2: LinearParams
    head_image_1: LinearParams
    head_image_2: LinearParams
    fuse: AttentionBlockParams          # initial image-queries-events fusion
    loop_event: AttentionBlockParams    # loop block 1: F_j queries the event feature
    loop_anchor: AttentionBlockParams   # loop block 2: result queries the fused anchor
    prompt_in: LinearParams
    prompt_out: LinearParams
    decoder: list[LinearParams] = field(default_factory=list)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []

        def lin(name: str, p: LinearParams) -> None:
            out.append((f"{name}.w", p.w))
            out.append((f"{name}.b", p.b))

        def block(name: str, p: AttentionBlockParams) -> None:
            out.append((f"{name}.ln_q.gamma", p.ln_q.gamma))
            out.append((f"{name}.ln_q.beta", p.ln_q.beta))
            out.append((f"{name}.ln_kv.gamma", p.ln_kv.gamma))
            out.append((f"{name}.ln_kv.beta", p.ln_kv.beta))
            lin(f"{name}.wq", p.wq)
            lin(f"{name}.wk", p.wk)
            lin(f"{name}.wv", p.wv)
            lin(f"{name}.wo", p.wo)
            out.append((f"{name}.ln_ff.gamma", p.ln_ff.gamma))
            out.append((f"{name}.ln_ff.beta", p.ln_ff.beta))
            lin(f"{name}.ff1", p.ff1)
            lin(f"{name}.ff2", p.ff2)

        lin("head_event_1", self.head_event_1)
        lin("head_event_2", self.head_event_2)
        lin("head_image_1", self.head_image_1)
        lin("head_image_2", self.head_image_2)
        block("fuse", self.fuse)
        block("loop_event", self.loop_event)
        block("loop_anchor", self.loop_anchor)
        lin("prompt_in", self.prompt_in)
        lin("prompt_out", self.prompt_out)
        for i, layer in enumerate(self.decoder):
            lin(f"decoder.{i}", layer)
        return out


def _init_linear(rng: np.random.Generator, n_in: int, n_out: int) -> LinearParams:
    w = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))
    return LinearParams(Tensor(w, requires_grad=True), Tensor(np.zeros(n_out), requires_grad=True))


def _init_block(rng: np.random.Generator, c: int) -> AttentionBlockParams:
    def ln() -> LayerNormParams:
        return LayerNormParams(
            Tensor(np.ones(c), requires_grad=True), Tensor(np.zeros(c), requires_grad=True)
        )

    return AttentionBlockParams(
        ln_q=ln(),
        ln_kv=ln(),
        wq=_init_linear(rng, c, c),
        wk=_init_linear(rng, c, c),
        wv=_init_linear(rng, c, c),
        wo=_init_linear(rng, c, c),
        ln_ff=ln(),
        ff1=_init_linear(rng, c, 2 * c),
        ff2=_init_linear(rng, 2 * c, c),
    )


def init_params(config: SeeNetConfig) -> SeeNetParams:
    rng = np.random.default_rng(config.seed)
    c = config.channels
    decoder = [_init_linear(rng, c, c) for _ in range(config.decoder_layers - 1)]
    decoder.append(_init_linear(rng, c, 3))
    return SeeNetParams(
        head_event_1=_init_linear(rng, config.voxel_bins + config.pos_dim, c),
        head_event_2=_init_linear(rng, c, c),
        head_image_1=_init_linear(rng, 3 + config.pos_dim, c),
        head_image_2=_init_linear(rng, c, c),
        fuse=_init_block(rng, c),
        loop_event=_init_block(rng, c),
        loop_anchor=_init_block(rng, c),
        prompt_in=_init_linear(rng, 1, c),
        prompt_out=_init_linear(rng, c + 1, c),
        decoder=decoder,
    )


# ---------------------------------------------------------------------------
# functional pieces on (sequence, channels) tensors


def _row_broadcast(vec: Tensor, rows: int) -> Tensor:
    """Tile a (C,) vector to (rows, C) through an outer product so gradients flow."""
    ones = Tensor(np.ones((rows, 1)))
    return ad.matmul(ones, ad.reshape(vec, (1, vec.size)))


def _linear(x: Tensor, p: LinearParams) -> Tensor:
    return ad.matmul(x, p.w) + _row_broadcast(p.b, x.shape[0])


def _layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    c = x.shape[1]
    j = Tensor(np.full((c, c), 1.0 / c))  # row-mean replicated across the row
    m = ad.matmul(x, j)
    centered = x - m
    var = ad.matmul(centered * centered, j)
    normed = centered / ad.sqrt(var + LAYER_NORM_EPS)
    rows = x.shape[0]
    return normed * _row_broadcast(p.gamma, rows) + _row_broadcast(p.beta, rows)


def attention_mix(query_flat: Tensor, kv_flat: Tensor, block: AttentionBlockParams, heads: int) -> Tensor:
    """Multi-head softmax mixing term before the output projection."""
    qn = _layer_norm(query_flat, block.ln_q)
    kn = _layer_norm(kv_flat, block.ln_kv)
    q = _linear(qn, block.wq)
    k = _linear(kn, block.wk)
    v = _linear(kn, block.wv)
    c = q.shape[1]
    d = c // heads
    scale = 1.0 / math.sqrt(d)
    mixed = []
    for h in range(heads):
        qh = ad.slice_axis(q, 1, h * d, (h + 1) * d)
        kh = ad.slice_axis(k, 1, h * d, (h + 1) * d)
        vh = ad.slice_axis(v, 1, h * d, (h + 1) * d)
        logits = ad.matmul(qh, ad.transpose2(kh)) * scale
        weights = ad.softmax_lastdim(logits)
        mixed.append(ad.matmul(weights, vh))
    return ad.concat_lastdim(mixed)


def _cross_attention_flat(
    query_flat: Tensor, kv_flat: Tensor, block: AttentionBlockParams, heads: int
) -> Tensor:
    mix = attention_mix(query_flat, kv_flat, block, heads)
    x = query_flat + _linear(mix, block.wo)
    ff = _linear(ad.relu(_linear(_layer_norm(x, block.ln_ff), block.ff1)), block.ff2)
    return x + ff


def cross_attention(
    query_feat: Tensor, kv_feat: Tensor, block: AttentionBlockParams, heads: int
) -> Tensor:
    """Pre-LN cross-attention with residual and feed-forward, on H x W x C features."""
    if not np.all(np.isfinite(query_feat.data)) or not np.all(np.isfinite(kv_feat.data)):
        raise FloatingPointError("non-finite attention input")
    h, w, c = query_feat.shape
    if c % heads:
        raise ValueError("feature width must be divisible by the head count")
    q = ad.reshape(query_feat, (h * w, c))
    kv = ad.reshape(kv_feat, (kv_feat.shape[0] * kv_feat.shape[1], c))
    return ad.reshape(_cross_attention_flat(q, kv, block, heads), (h, w, c))


def _head(stack: np.ndarray, l1: LinearParams, l2: LinearParams) -> Tensor:
    h, w, cin = stack.shape
    x = Tensor(stack.reshape(h * w, cin))
    out = _linear(ad.relu(_linear(x, l1)), l2)
    return ad.reshape(out, (h, w, out.shape[1]))


def input_heads(
    img: RgbImage, voxels: VoxelGrid, pos: np.ndarray, params: SeeNetParams
) -> tuple[Tensor, Tensor]:
    """Initial event and image features: two per-pixel linear layers with a
    rectifier between, fed the inputs concatenated with the positional feature."""
    if voxels.values.shape[:2] != img.values.shape[:2] or pos.shape[:2] != img.values.shape[:2]:
        raise ValueError("image, voxel grid, and positional feature sizes disagree")
    expected_in = params.head_event_1.w.shape[0]
    if voxels.bins + pos.shape[2] != expected_in:
        raise ValueError(
            f"voxel bins + pos_dim = {voxels.bins + pos.shape[2]} does not match head width {expected_in}"
        )
    f_e = _head(np.concatenate([voxels.values, pos], axis=2), params.head_event_1, params.head_event_2)
    f_i = _head(np.concatenate([img.values, pos], axis=2), params.head_image_1, params.head_image_2)
    return f_e, f_i


def encode(f_e: Tensor, f_i: Tensor, config: SeeNetConfig, params: SeeNetParams) -> BlrFeature:
    """Fuse then refine: F_1 = fuse(image queries events); each loop iteration
    queries the running feature over the events, then the result over F_1.  Loop
    weights are shared across iterations."""
    h, w, c = f_i.shape
    e_flat = ad.reshape(f_e, (f_e.shape[0] * f_e.shape[1], c))
    i_flat = ad.reshape(f_i, (h * w, c))
    f_1 = _cross_attention_flat(i_flat, e_flat, params.fuse, config.heads)
    f_j = f_1
    for j in range(config.loop_count):
        a = _cross_attention_flat(f_j, e_flat, params.loop_event, config.heads)
        f_j = _cross_attention_flat(a, f_1, params.loop_anchor, config.heads)
        if not np.all(np.isfinite(f_j.data)):
            raise FloatingPointError(f"non-finite encoder feature at loop iteration {j}")
    return BlrFeature(ad.reshape(f_j, (h, w, c)))


def prompt_embed(prompt: "BrightnessPrompt | float", params: SeeNetParams) -> Tensor:
    """Lift the scalar prompt to a channel-width vector: inner MLP, concat with
    the raw prompt, outer linear map."""
    value = prompt.value if isinstance(prompt, BrightnessPrompt) else float(prompt)
    BrightnessPrompt(value)  # range check
    b = Tensor(np.array([[value]]))
    hidden = ad.relu(_linear(b, params.prompt_in))
    cat = ad.concat_lastdim([hidden, b])
    out = _linear(cat, params.prompt_out)
    return ad.reshape(out, (out.shape[1],))


def _decode_tensor(
    blr: BlrFeature, b_vec: Tensor, config: SeeNetConfig, params: SeeNetParams
) -> Tensor:
    h, w, c = blr.tensor.shape
    if b_vec.size != c:
        raise ValueError("prompt embedding width does not match the feature channels")
    x = ad.reshape(blr.tensor, (h * w, c))
    b_rows = _row_broadcast(b_vec, h * w)
    for layer in params.decoder[:-1]:
        merged = x * b_rows if config.prompt_merge == "multiply" else x + b_rows
        x = ad.relu(_linear(merged, layer))
    merged = x * b_rows if config.prompt_merge == "multiply" else x + b_rows
    out = ad.sigmoid(_linear(merged, params.decoder[-1]))
    return ad.reshape(out, (h, w, 3))


def decode(blr: BlrFeature, b_vec: Tensor, config: SeeNetConfig, params: SeeNetParams) -> RgbImage:
    """Pixel-wise MLP decoder; the prompt embedding is merged into every layer
    and the final layer lands in [0, 1] through a sigmoid."""
    return RgbImage(_decode_tensor(blr, b_vec, config, params).data)


def _forward_tensor(
    img: RgbImage,
    voxels: VoxelGrid,
    prompt: "BrightnessPrompt | float",
    config: SeeNetConfig,
    params: SeeNetParams,
    pos: np.ndarray | None = None,
) -> Tensor:
    if pos is None:
        pos = position_embedding(img.width, img.height, BayerOrder(config.bayer), config.pos_dim)
    f_e, f_i = input_heads(img, voxels, pos, params)
    blr = encode(f_e, f_i, config, params)
    b_vec = prompt_embed(prompt, params)
    return _decode_tensor(blr, b_vec, config, params)


def forward(
    img: RgbImage,
    voxels: VoxelGrid,
    prompt: "BrightnessPrompt | float",
    config: SeeNetConfig,
    params: SeeNetParams,
    pos: np.ndarray | None = None,
) -> RgbImage:
    """Full enhancement pass: heads -> encode -> prompt embed -> decode."""
    return RgbImage(_forward_tensor(img, voxels, prompt, config, params, pos).data)


# ---------------------------------------------------------------------------
# loss


def _loss_tensor(pred: Tensor, target: np.ndarray, lambda1: float, lambda2: float, epsilon: float) -> Tensor:
    h, w, _ = pred.shape
    t = Tensor(target)
    diff = pred - t
    image_term = ad.mean(ad.sqrt(diff * diff + epsilon * epsilon))

    def grad_mean(axis: int, extent: int) -> Tensor:
        p_hi = ad.slice_axis(pred, axis, 1, extent)
        p_lo = ad.slice_axis(pred, axis, 0, extent - 1)
        t_hi = ad.slice_axis(t, axis, 1, extent)
        t_lo = ad.slice_axis(t, axis, 0, extent - 1)
        return ad.mean(ad.absolute((p_hi - p_lo) - (t_hi - t_lo)))

    # forward differences are zero on the far border, so the full-grid mean is the
    # sliced mean rescaled by the populated fraction
    total = 2.0 * h * w * 3
    grad_term = Tensor(np.asarray(0.0))
    if w > 1:
        grad_term = grad_term + grad_mean(1, w) * (h * (w - 1) * 3 / total)
    if h > 1:
        grad_term = grad_term + grad_mean(0, h) * ((h - 1) * w * 3 / total)
    return image_term * lambda1 + grad_term * lambda2


def loss(
    i_o: RgbImage, i_t: RgbImage, lambda1: float = 1.0, lambda2: float = 0.5, epsilon: float = 1e-3
) -> float:
    """Charbonnier image term plus L1 forward-difference gradient term."""
    if i_o.values.shape != i_t.values.shape:
        raise ValueError("image shapes differ")
    return float(_loss_tensor(Tensor(i_o.values), i_t.values, lambda1, lambda2, epsilon).data)


# ---------------------------------------------------------------------------
# training


def train_toy(
    dataset,
    config: SeeNetConfig,
    steps: int,
    lr: float,
) -> tuple[SeeNetParams, list[float]]:
    """Plain SGD on the training loss over enumerated frame pairs.

    ``dataset`` is a PairSet or list of PairSets; the prompt for each step is the
    target frame's global brightness.  Deterministic given the config seed.
    """
    pair_sets = dataset if isinstance(dataset, (list, tuple)) else [dataset]
    samples = []
    for ps in pair_sets:
        samples.extend(ps.frame_pairs())
    if not samples:
        raise ValueError("empty training dataset")

    params = init_params(config)
    tensors = [t for _, t in params.named_tensors()]
    pos_cache: dict[tuple[int, int], np.ndarray] = {}
    voxel_cache: dict[int, VoxelGrid] = {}
    losses: list[float] = []
    for step in range(steps):
        input_rec, target_rec, frame = samples[step % len(samples)]
        img = input_rec.frames[frame]
        target = target_rec.frames[frame]
        key = (img.height, img.width)
        if key not in pos_cache:
            pos_cache[key] = position_embedding(
                img.width, img.height, BayerOrder(config.bayer), config.pos_dim
            )
        if id(input_rec) not in voxel_cache:
            ev = input_rec.events
            t0 = int(ev.ts.min()) if len(ev) else 0
            t1 = int(ev.ts.max()) if len(ev) else 1
            voxel_cache[id(input_rec)] = voxelize(ev, config.voxel_bins, t0, max(t1, t0 + 1))
        voxels = voxel_cache[id(input_rec)]
        prompt = brightness(target)
        pred = _forward_tensor(img, voxels, prompt, config, params, pos_cache[key])
        step_loss = _loss_tensor(pred, target.values, config.lambda1, config.lambda2, config.epsilon)
        value = float(step_loss.data)
        if not math.isfinite(value):
            raise ArithmeticError(f"non-finite loss at step {step}")
        losses.append(value)
        for t in tensors:
            t.grad = None
        step_loss.backward()
        for t in tensors:
            if t.grad is not None:
                t.data -= lr * t.grad
    return params, losses


# ---------------------------------------------------------------------------
# checkpoints


def save_params(params: SeeNetParams, config: SeeNetConfig, path) -> None:
    from . import formats

    formats.save_checkpoint(
        [(name, t.data) for name, t in params.named_tensors()],
        formats.config_to_text(config),
        path,
    )


def load_params(path) -> tuple[SeeNetParams, SeeNetConfig]:
    from . import formats

    arrays, text = formats.load_checkpoint(path)
    config = formats.config_from_text(text, SeeNetConfig)
    params = init_params(config)
    for name, tensor in params.named_tensors():
        if name not in arrays:
            raise formats.FormatError(f"checkpoint missing parameter {name}")
        if arrays[name].shape != tensor.data.shape:
            raise ValueError(f"checkpoint parameter {name} has shape {arrays[name].shape}")
        tensor.data = arrays[name]
    return params, config


# ---------------------------------------------------------------------------
# parameter accounting


def parameter_count(config: SeeNetConfig) -> int:
    """Closed-form parameter total; must equal a walk over instantiated tensors."""
    c = config.channels
    head_e = (config.voxel_bins + config.pos_dim) * c + c + c * c + c
    head_i = (3 + config.pos_dim) * c + c + c * c + c
    block = 6 * c + 4 * (c * c + c) + (c * 2 * c + 2 * c) + (2 * c * c + c)
    prompt = (1 * c + c) + ((c + 1) * c + c)
    decoder = (config.decoder_layers - 1) * (c * c + c) + (c * 3 + 3)
    return head_e + head_i + 3 * block + prompt + decoder


def count_instantiated(params: SeeNetParams) -> int:
    return sum(t.size for _, t in params.named_tensors())


# ---------------------------------------------------------------------------
# gradient verification helpers


def end_to_end_grad_errors(
    config: SeeNetConfig, height: int = 6, width: int = 6, seed: int = 0, h: float = 1e-5
) -> dict[str, float]:
    """Finite-difference error of d(loss)/d(group) for every parameter group."""
    rng = np.random.default_rng(seed)
    params = init_params(config)
    img = RgbImage(rng.uniform(0.1, 0.9, size=(height, width, 3)))
    target = rng.uniform(0.1, 0.9, size=(height, width, 3))
    grid = VoxelGrid(rng.normal(0.0, 0.5, size=(height, width, config.voxel_bins)), 0, 1)
    pos = position_embedding(width, height, BayerOrder(config.bayer), config.pos_dim)

    def objective(_t: Tensor) -> Tensor:
        pred = _forward_tensor(img, grid, 0.5, config, params, pos)
        return _loss_tensor(pred, target, config.lambda1, config.lambda2, config.epsilon)

    errors: dict[str, float] = {}
    for name, tensor in params.named_tensors():
        errors[name] = ad.max_grad_error(objective, tensor, h)
    return errors
