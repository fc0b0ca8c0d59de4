"""Full-model assembly: stem, four stages of mixing blocks, patch merging,
classifier head, and the named presets.

A model is a declarative ``ModelConfig`` plus a flat named-parameter table;
``forward`` is a pure function of (table, images). Each block runs

    [comm-in] -> partition -> norm -> aggregator -> +residual
              -> norm -> per-token FFN -> +residual -> reverse -> [comm-out]

where the cross-window communication (cyclic shift, spatial shuffle, or
messenger exchange) is applied on odd-indexed blocks of each stage only.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import aggregators as agg
from . import geometry as geo
from . import tensor as T
from .aggregators import init_aggregator, trunc_normal, zeros_param
from .geometry import FeatureMap, MessengerState
from .io import load_checkpoint, save_checkpoint
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "Model",
    "ConfigError",
    "preset",
    "PRESETS",
    "build_model",
    "forward",
    "patch_embed",
    "patch_merge",
    "stage_channels",
    "stage_groups",
    "stage_heads",
    "comm_active",
    "save_model",
    "load_model",
]

COMM_KINDS = ("Shift", "Shuffle", "MSG", "None")


class ConfigError(ValueError):
    """A model configuration contradicts itself."""


@dataclass(frozen=True)
class ModelConfig:
    """Architectural description of one model.

    ``width`` is the channel count of stage 1; stage s has width * 2^(s-1)
    channels. ``groups`` is the target channel-group count for the axial
    aggregators (per stage, the largest divisor of the stage width that does
    not exceed it). ``heads_divisor`` sets attention heads to roughly
    C_stage / heads_divisor, adjusted down to a divisor of C_stage.
    """

    width: int
    depths: tuple[int, int, int, int]
    window: int = 7
    aggregator: str = "Linear"
    comm: str = "Shift"
    ffn_ratio: int = 4
    classes: int = 1000
    groups: int = 32
    heads_divisor: int = 32
    mlp_ratio: int = 4
    messenger_count: int = 1
    messenger_region: int = 2
    layout_faithful: bool = False

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        validate_config(self)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["depths"] = list(d["depths"])
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(ModelConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return ModelConfig(**d)


def validate_config(cfg: ModelConfig) -> None:
    if cfg.width < 1:
        raise ConfigError(f"width must be >= 1, got {cfg.width}")
    if len(cfg.depths) != 4 or any(d < 1 for d in cfg.depths):
        raise ConfigError(f"depths must be 4 counts >= 1, got {cfg.depths}")
    if cfg.window < 1:
        raise ConfigError(f"window must be >= 1, got {cfg.window}")
    if cfg.aggregator not in agg.AGGREGATOR_KINDS:
        raise ConfigError(
            f"aggregator {cfg.aggregator!r} not in {agg.AGGREGATOR_KINDS}")
    if cfg.comm not in COMM_KINDS:
        raise ConfigError(f"comm {cfg.comm!r} not in {COMM_KINDS}")
    if cfg.ffn_ratio < 1 or cfg.mlp_ratio < 1:
        raise ConfigError("ffn_ratio and mlp_ratio must be >= 1")
    if cfg.classes < 2:
        raise ConfigError(f"classes must be >= 2, got {cfg.classes}")
    if cfg.groups < 1 or cfg.heads_divisor < 1:
        raise ConfigError("groups and heads_divisor must be >= 1")
    if cfg.messenger_count < 1 or cfg.messenger_region < 1:
        raise ConfigError("messenger fields must be >= 1")


def _largest_divisor_leq(n: int, cap: int) -> int:
    for d in range(min(cap, n), 0, -1):
        if n % d == 0:
            return d
    return 1


def stage_channels(cfg: ModelConfig, stage: int) -> int:
    return cfg.width * (2 ** stage)


def stage_groups(cfg: ModelConfig, stage: int) -> tuple[int, int]:
    """(group count, group size gs) for a stage."""
    c = stage_channels(cfg, stage)
    g = _largest_divisor_leq(c, cfg.groups)
    return g, c // g


def stage_heads(cfg: ModelConfig, stage: int) -> int:
    c = stage_channels(cfg, stage)
    return _largest_divisor_leq(c, max(1, c // cfg.heads_divisor))


def comm_active(cfg: ModelConfig, block_index: int) -> bool:
    """Cross-window communication runs on odd-indexed blocks of a stage."""
    return cfg.comm != "None" and block_index % 2 == 1


def stage_has_comm(cfg: ModelConfig, stage: int) -> bool:
    return any(comm_active(cfg, i) for i in range(cfg.depths[stage]))


# -- presets ------------------------------------------------------------------

PRESETS: dict[str, ModelConfig] = {
    "swin-linmapper-tiny": ModelConfig(width=64, depths=(2, 4, 22, 4)),
    "shuffle-linmapper-tiny": ModelConfig(width=64, depths=(2, 4, 22, 4), comm="Shuffle"),
    "msg-linmapper-tiny": ModelConfig(width=64, depths=(2, 4, 22, 4), comm="MSG"),
    "swin-linmapper-small": ModelConfig(width=96, depths=(2, 4, 22, 4)),
    "swin-linmapper-base": ModelConfig(width=128, depths=(2, 4, 22, 4)),
    "swin-t-mhsa": ModelConfig(width=96, depths=(2, 2, 6, 2), aggregator="MHSA"),
    "swin-linmapper-tiny-baseline": ModelConfig(width=96, depths=(2, 2, 6, 2), groups=16),
    "swin-linmapper-tiny-wide": ModelConfig(width=112, depths=(2, 2, 6, 2), groups=16),
    "swin-linmapper-tiny-deep": ModelConfig(width=64, depths=(2, 4, 22, 4)),
    "toy-desk": ModelConfig(width=16, depths=(1, 1, 2, 1), window=4, classes=4),
}


def preset(name: str) -> ModelConfig:
    """Look up a named configuration; unknown names list what exists."""
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None


def resolve_config(spec: str | dict | ModelConfig) -> ModelConfig:
    """Accept a preset name, a config dict, or a ready ModelConfig."""
    if isinstance(spec, ModelConfig):
        return spec
    if isinstance(spec, dict):
        return ModelConfig.from_dict(spec)
    return preset(spec)


# -- construction -------------------------------------------------------------


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Tensor]
    dtype: object

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def replace_params(self, params: dict[str, Tensor]) -> "Model":
        return Model(config=self.config, params=params, dtype=self.dtype)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Instantiate every parameter of the configured model.

    Parameters are created in one fixed order from a single seeded generator,
    so identical (config, seed) pairs give bit-identical tables.
    """
    validate_config(cfg)
    rng = np.random.Generator(np.random.PCG64(seed))
    params: dict[str, Tensor] = {}

    def w(name, shape):
        params[name] = trunc_normal(rng, shape, dtype=dtype)

    def zeros(name, shape):
        params[name] = zeros_param(shape, dtype)

    def ones(name, shape):
        params[name] = Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    def norm(prefix, c):
        ones(f"{prefix}.g", (c,))
        zeros(f"{prefix}.b", (c,))

    c0 = cfg.width
    w("stem.proj.w", (c0, 48))
    zeros("stem.proj.b", (c0,))
    norm("stem.norm", c0)

    for s in range(4):
        c = stage_channels(cfg, s)
        if cfg.comm == "MSG" and stage_has_comm(cfg, s):
            w(f"stage{s}.msg_init", (cfg.messenger_count, c))
        for i in range(cfg.depths[s]):
            prefix = f"stage{s}.block{i}"
            norm(f"{prefix}.norm1", c)
            _, gs = stage_groups(cfg, s)
            heads = stage_heads(cfg, s)
            ap = init_aggregator(cfg.aggregator, c, cfg.window, gs=gs, heads=heads,
                                 rho=cfg.mlp_ratio, seed=int(rng.integers(2 ** 63)),
                                 dtype=dtype)
            for name, t in ap.tensors():
                params[f"{prefix}.agg.{name}"] = t
            norm(f"{prefix}.norm2", c)
            hidden = cfg.ffn_ratio * c
            w(f"{prefix}.ffn.w1", (hidden, c))
            zeros(f"{prefix}.ffn.b1", (hidden,))
            w(f"{prefix}.ffn.w2", (c, hidden))
            zeros(f"{prefix}.ffn.b2", (c,))
            if cfg.comm == "MSG" and comm_active(cfg, i):
                w(f"{prefix}.msg.collect.w", (c, c))
                zeros(f"{prefix}.msg.collect.b", (c,))
                w(f"{prefix}.msg.distribute.w", (c, c))
                zeros(f"{prefix}.msg.distribute.b", (c,))
        if s < 3:
            norm(f"merge{s}.norm", 4 * c)
            w(f"merge{s}.reduce.w", (2 * c, 4 * c))

    c3 = stage_channels(cfg, 3)
    norm("head.norm", c3)
    w("head.w", (cfg.classes, c3))
    zeros("head.b", (cfg.classes,))
    return Model(config=cfg, params=params, dtype=np.dtype(dtype))


_AGG_PARAM_NAMES = {
    "Linear": ("w_h", "b_h", "w_w", "b_w", "w_p", "b_p"),
    "DWLinear": ("w_h", "b_h", "w_w", "b_w", "w_p", "b_p"),
    "MLP": ("w1_h", "b1_h", "w2_h", "b2_h", "w1_w", "b1_w", "w2_w", "b2_w",
            "w_p", "b_p"),
    "MHSA": ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o", "rel_bias"),
}


def _agg_params(model: Model, prefix: str, stage: int):
    cfg = model.config
    p = {name: model.params[f"{prefix}.agg.{name}"]
         for name in _AGG_PARAM_NAMES[cfg.aggregator]}
    _, gs = stage_groups(cfg, stage)
    if cfg.aggregator == "Linear":
        return agg.LinMapperParams(**p, gs=gs, ws=cfg.window)
    if cfg.aggregator == "DWLinear":
        return agg.DWLinMapperParams(**p, gs=gs, ws=cfg.window)
    if cfg.aggregator == "MLP":
        return agg.WindowMlpParams(**p, gs=gs, ws=cfg.window, rho=cfg.mlp_ratio)
    return agg.WindowMhsaParams(**p, heads=stage_heads(cfg, stage), ws=cfg.window)


# -- forward pieces -----------------------------------------------------------


def patch_embed(model: Model, images: Tensor) -> FeatureMap:
    """Non-overlapping 4x4 patch linear embedding followed by layer norm.

    Images are (B, H, W, 3); H and W are zero-padded up to multiples of 4.
    The token grid comes out as ceil(H/4) x ceil(W/4).
    """
    fm, _ = geo.pad_to_multiple(FeatureMap(images), 4)
    v = fm.values
    b, h, w, c = v.shape
    gh, gw = h // 4, w // 4
    v = T.reshape(v, (b, gh, 4, gw, 4, c))
    v = T.transpose(v, (0, 1, 3, 2, 4, 5))
    v = T.reshape(v, (b, gh, gw, 16 * c))
    v = T.linear(v, model.params["stem.proj.w"], model.params["stem.proj.b"])
    v = T.layer_norm(v, model.params["stem.norm.g"], model.params["stem.norm.b"])
    return FeatureMap(v)


def patch_merge(model: Model, x: FeatureMap, stage: int) -> FeatureMap:
    """Concatenate each 2x2 token neighborhood, norm, reduce 4C -> 2C."""
    fm, _ = geo.pad_to_multiple(x, 2)
    v = fm.values
    b, h, w, c = v.shape
    v = T.reshape(v, (b, h // 2, 2, w // 2, 2, c))
    v = T.transpose(v, (0, 1, 3, 2, 4, 5))
    v = T.reshape(v, (b, h // 2, w // 2, 4 * c))
    v = T.layer_norm(v, model.params[f"merge{stage}.norm.g"],
                     model.params[f"merge{stage}.norm.b"])
    v = T.matmul(v, T.transpose(model.params[f"merge{stage}.reduce.w"], (1, 0)))
    return FeatureMap(v)


def choose_messenger_region(gh: int, gw: int, c: int, target: int) -> int:
    """Largest region side <= target that tiles the window grid and whose
    area divides the channel count (1 disables the exchange)."""
    for r in range(min(target, gh, gw), 0, -1):
        if gh % r == 0 and gw % r == 0 and c % (r * r) == 0:
            return r
    return 1


def _init_messengers(model: Model, stage: int, x: FeatureMap) -> MessengerState | None:
    cfg = model.config
    if cfg.comm != "MSG" or not stage_has_comm(cfg, stage):
        return None
    ws = cfg.window
    gh = -(-x.height // ws)
    gw = -(-x.width // ws)
    c = x.channels
    init = model.params[f"stage{stage}.msg_init"]
    tokens = T.broadcast_to(T.reshape(init, (1, cfg.messenger_count, c)),
                            (x.batch * gh * gw, cfg.messenger_count, c))
    r = choose_messenger_region(gh, gw, c, cfg.messenger_region)
    return MessengerState(tokens=tokens, batch=x.batch, win_h=gh, win_w=gw, region=r)


def _ffn(model: Model, prefix: str, x: Tensor) -> Tensor:
    h = T.linear(x, model.params[f"{prefix}.ffn.w1"], model.params[f"{prefix}.ffn.b1"])
    return T.linear(T.gelu(h), model.params[f"{prefix}.ffn.w2"], model.params[f"{prefix}.ffn.b2"])


def block_forward(model: Model, x: FeatureMap, stage: int, index: int,
                  msg: MessengerState | None = None) -> tuple[FeatureMap, MessengerState | None]:
    """One mixing block; returns the new map and the threaded messenger state."""
    cfg = model.config
    ws = cfg.window
    prefix = f"stage{stage}.block{index}"
    active = comm_active(cfg, index)
    shift = ws // 2

    fm, rec = geo.pad_to_multiple(x, ws)
    if active and cfg.comm == "Shift":
        fm = geo.cyclic_shift(fm, -shift, -shift)
    elif active and cfg.comm == "Shuffle":
        fm = geo.spatial_shuffle(fm, ws)

    wset = geo.window_partition(fm, ws)
    win = wset.windows

    if active and cfg.comm == "MSG" and msg is not None:
        pooled = T.tmean(win, axis=1)
        upd = T.linear(pooled, model.params[f"{prefix}.msg.collect.w"],
                       model.params[f"{prefix}.msg.collect.b"])
        tokens = msg.tokens + T.reshape(upd, (upd.shape[0], 1, upd.shape[1]))
        msg = dataclasses.replace(msg, tokens=tokens)
        msg = geo.messenger_exchange(msg)
        dist = T.linear(T.tmean(msg.tokens, axis=1),
                        model.params[f"{prefix}.msg.distribute.w"],
                        model.params[f"{prefix}.msg.distribute.b"])
        win = win + T.reshape(dist, (dist.shape[0], 1, dist.shape[1]))

    normed = T.layer_norm(win, model.params[f"{prefix}.norm1.g"],
                          model.params[f"{prefix}.norm1.b"])
    win = win + agg.aggregate(cfg.aggregator, normed,
                              _agg_params(model, prefix, stage),
                              cfg.layout_faithful)
    normed = T.layer_norm(win, model.params[f"{prefix}.norm2.g"],
                          model.params[f"{prefix}.norm2.b"])
    win = win + _ffn(model, prefix, normed)

    fm = geo.window_reverse(wset.with_windows(win))
    if active and cfg.comm == "Shift":
        fm = geo.cyclic_shift(fm, shift, shift)
    elif active and cfg.comm == "Shuffle":
        fm = geo.spatial_unshuffle(fm, ws)
    out = FeatureMap(T.crop_hw(fm.values, rec.orig_h, rec.orig_w))
    return out, msg


def forward(model: Model, images: Tensor) -> Tensor:
    """Full model: stem, 4 stages with merges, norm, pooled linear head."""
    fm = patch_embed(model, images)
    cfg = model.config
    for s in range(4):
        msg = _init_messengers(model, s, fm)
        for i in range(cfg.depths[s]):
            fm, msg = block_forward(model, fm, s, i, msg)
        if s < 3:
            fm = patch_merge(model, fm, s)
    v = T.layer_norm(fm.values, model.params["head.norm.g"], model.params["head.norm.b"])
    pooled = T.tmean(v, axis=(1, 2))
    return T.linear(pooled, model.params["head.w"], model.params["head.b"])


# -- persistence --------------------------------------------------------------


def save_model(path, model: Model, extra: dict | None = None) -> None:
    """Write config + parameter table (plus optional extra JSON state)."""
    blob = {"schema_version": 1, "model": model.config.to_dict()}
    if extra:
        blob["extra"] = extra
    save_checkpoint(path, blob, {k: v.data for k, v in model.params.items()})


def load_model(path) -> tuple[Model, dict]:
    """Read a checkpoint back into a Model; returns (model, extra dict)."""
    blob, tensors = load_checkpoint(path)
    cfg = ModelConfig.from_dict(blob["model"])
    params = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()}
    model = Model(config=cfg, params=params,
                  dtype=next(iter(params.values())).data.dtype if params else np.dtype(np.float32))
    return model, blob.get("extra", {})
