"""Pre-activation ResNet-v2 with Group Normalization and Weight Standardization.

Layout: root conv (-> optional max-pool) -> four stages of bottleneck blocks
-> final GN -> ReLU -> global average pool -> dense head. Every parameter is
addressed by a stable dotted name, e.g. ``stages.1.blocks.0.conv2.weight``.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from minibit import layers
from minibit.errors import ConfigError, RegistryError, ShapeError
from minibit.tensor import DTYPE, Normal, Prng, tensor_new

EXPANSION = 4
STAGE_STRIDES = (1, 2, 2, 2)

PRESETS = {
    "resnet14": [1, 1, 1, 1],
    "resnet26": [2, 2, 2, 2],
    "resnet50": [3, 4, 6, 3],
    "resnet101": [3, 4, 23, 3],
    "resnet152": [3, 8, 36, 3],
}


@dataclass
class ResNetConfig:
    stage_blocks: list = field(default_factory=lambda: [1, 1, 1, 1])
    width_factor: int = 1
    num_classes: int = 2
    in_channels: int = 3
    base_width: int = 64
    root_kernel: int = 7
    root_stride: int = 2
    root_pool: bool = True
    max_groups: int = layers.DEFAULT_GROUPS
    ws: bool = True

    def validate(self):
        if len(self.stage_blocks) != 4 or any(int(b) < 0 for b in self.stage_blocks):
            raise ConfigError(f"stage_blocks must be 4 non-negative integers, got {self.stage_blocks}")
        for name in ("width_factor", "num_classes", "in_channels", "base_width",
                     "root_kernel", "root_stride", "max_groups"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        return self

    @property
    def root_width(self):
        return self.base_width * self.width_factor

    def stage_widths(self):
        """(mid, out) channel counts per stage."""
        mids = [self.base_width * self.width_factor * 2**i for i in range(4)]
        return [(m, m * EXPANSION) for m in mids]

    def min_input_size(self):
        """Smallest spatial size for which every stride-2 layer still sees >= 1 pixel."""
        downs = (self.root_stride > 1) + int(self.root_pool)
        downs += sum(1 for s, b in zip(STAGE_STRIDES, self.stage_blocks) if s > 1 and b > 0)
        return max(2**downs, self.root_kernel if self.root_stride > 1 else 1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known).validate()

    @classmethod
    def preset(cls, name, width_factor=1, num_classes=2, **overrides):
        """Named architectures. ``resnet14`` is the desk-scale variant with a
        3x3 stride-1 root and no root pool; the rest use the 7x7/2 root + pool."""
        key = name.lower().replace("-", "").split("x")[0]
        if key not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        if "x" in name.lower():
            width_factor = int(name.lower().split("x")[1])
        base = dict(stage_blocks=list(PRESETS[key]), width_factor=width_factor,
                    num_classes=num_classes)
        if key == "resnet14":
            base.update(root_kernel=3, root_stride=1, root_pool=False)
        base.update(overrides)
        return cls(**base).validate()


def he_normal(shape, fan_in, rng):
    return tensor_new(shape, Normal(0.0, float(np.sqrt(2.0 / fan_in))), rng)


def _gn(channels, cfg):
    return layers.GroupNorm(np.ones(channels, dtype=DTYPE), np.zeros(channels, dtype=DTYPE),
                            layers.default_groups(channels, cfg.max_groups))


def _conv(o, i, k, rng, cfg, stride=1, padding=0):
    return layers.Conv2d(he_normal((o, i, k, k), i * k * k, rng), stride=stride,
                         padding=padding, ws=cfg.ws)


class PreActBottleneck:
    """GN -> ReLU -> conv, three times (1x1, 3x3/stride, 1x1), plus shortcut.

    The projection shortcut, when present, reads the pre-activated input.
    """

    def __init__(self, cin, mid, cout, stride, rng, cfg):
        self.gn1 = _gn(cin, cfg)
        self.relu1 = layers.ReLU()
        self.conv1 = _conv(mid, cin, 1, rng, cfg)
        self.gn2 = _gn(mid, cfg)
        self.relu2 = layers.ReLU()
        self.conv2 = _conv(mid, mid, 3, rng, cfg, stride=stride, padding=1)
        self.gn3 = _gn(mid, cfg)
        self.relu3 = layers.ReLU()
        self.conv3 = _conv(cout, mid, 1, rng, cfg)
        self.proj = _conv(cout, cin, 1, rng, cfg, stride=stride) if (stride != 1 or cin != cout) else None

    def named_layers(self):
        out = [("gn1", self.gn1), ("conv1", self.conv1), ("gn2", self.gn2),
               ("conv2", self.conv2), ("gn3", self.gn3), ("conv3", self.conv3)]
        if self.proj is not None:
            out.append(("proj", self.proj))
        return out

    def forward(self, x):
        a1 = self.relu1.forward(self.gn1.forward(x))
        shortcut = self.proj.forward(a1) if self.proj is not None else x
        h = self.conv1.forward(a1)
        h = self.conv2.forward(self.relu2.forward(self.gn2.forward(h)))
        h = self.conv3.forward(self.relu3.forward(self.gn3.forward(h)))
        if h.shape != shortcut.shape:
            raise ShapeError(f"block residual {h.shape} vs shortcut {shortcut.shape}")
        return h + shortcut

    def backward(self, grad_out):
        grads = {}

        def step(name, layer, g):
            g, pg = layer.backward(g)
            for k, v in pg.items():
                grads[f"{name}.{k}"] = v
            return g

        g = step("conv3", self.conv3, grad_out)
        g, _ = self.relu3.backward(g)
        g = step("gn3", self.gn3, g)
        g = step("conv2", self.conv2, g)
        g, _ = self.relu2.backward(g)
        g = step("gn2", self.gn2, g)
        g = step("conv1", self.conv1, g)
        if self.proj is not None:
            g = g + step("proj", self.proj, grad_out)
            g, _ = self.relu1.backward(g)
            g = step("gn1", self.gn1, g)
        else:
            g, _ = self.relu1.backward(g)
            g = step("gn1", self.gn1, g) + grad_out
        return g, grads


class Model:
    def __init__(self, cfg, rng):
        self.config = cfg
        self.root = _conv(cfg.root_width, cfg.in_channels, cfg.root_kernel, rng, cfg,
                          stride=cfg.root_stride, padding=cfg.root_kernel // 2)
        self.root_pool = layers.MaxPool2d(3, 2, 1) if cfg.root_pool else None
        self.stages = []
        cin = cfg.root_width
        for blocks, stride, (mid, cout) in zip(cfg.stage_blocks, STAGE_STRIDES, cfg.stage_widths()):
            stage = []
            for b in range(blocks):
                stage.append(PreActBottleneck(cin, mid, cout, stride if b == 0 else 1, rng, cfg))
                cin = cout
            self.stages.append(stage)
        self.feature_dim = cin
        self.final_gn = _gn(cin, cfg)
        self.final_relu = layers.ReLU()
        self.pool = layers.GlobalAvgPool()
        self.head = zero_head(cin, cfg.num_classes)

    def named_layers(self):
        out = [("root.conv", self.root)]
        for si, stage in enumerate(self.stages):
            for bi, block in enumerate(stage):
                for name, layer in block.named_layers():
                    out.append((f"stages.{si}.blocks.{bi}.{name}", layer))
        out.append(("final_gn", self.final_gn))
        out.append(("head", self.head))
        return out

    @property
    def params(self):
        reg = {}
        for prefix, layer in self.named_layers():
            for k, v in layer.params().items():
                reg[f"{prefix}.{k}"] = v
        return reg

    def body_params(self):
        return {k: v for k, v in self.params.items() if not k.startswith("head.")}

    def num_params(self):
        return sum(v.size for v in self.params.values())

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"model expects [N,{self.config.in_channels},H,W], got {x.shape}")
        m = self.config.min_input_size()
        if x.shape[2] < m or x.shape[3] < m:
            raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} below minimum {m}x{m}")
        h = self.root.forward(x)
        if self.root_pool is not None:
            h = self.root_pool.forward(h)
        for stage in self.stages:
            for block in stage:
                h = block.forward(h)
        h = self.final_relu.forward(self.final_gn.forward(h))
        return self.head.forward(self.pool.forward(h))

    def backward(self, grad_logits):
        grads = {}
        g, pg = self.head.backward(grad_logits)
        grads.update({f"head.{k}": v for k, v in pg.items()})
        g, _ = self.pool.backward(g)
        g, _ = self.final_relu.backward(g)
        g, pg = self.final_gn.backward(g)
        grads.update({f"final_gn.{k}": v for k, v in pg.items()})
        for si in reversed(range(len(self.stages))):
            for bi in reversed(range(len(self.stages[si]))):
                g, pg = self.stages[si][bi].backward(g)
                grads.update({f"stages.{si}.blocks.{bi}.{k}": v for k, v in pg.items()})
        if self.root_pool is not None:
            g, _ = self.root_pool.backward(g)
        g, pg = self.root.backward(g)
        grads.update({f"root.conv.{k}": v for k, v in pg.items()})
        return {k: grads[k] for k in self.params}

    def load_params(self, registry, strict=True):
        """Copy values into the existing parameter arrays (in place)."""
        own = self.params
        missing = sorted(set(own) - set(registry))
        extra = sorted(set(registry) - set(own))
        if strict and (missing or extra):
            raise RegistryError(f"registry mismatch; missing={missing} unexpected={extra}")
        bad = [k for k in own if k in registry and registry[k].shape != own[k].shape]
        if bad:
            raise RegistryError(f"shape mismatch for {bad}")
        for k, v in own.items():
            if k in registry:
                np.copyto(v, registry[k])


def zero_head(features, num_classes):
    return layers.Dense(np.zeros((num_classes, features), dtype=DTYPE),
                        np.zeros(num_classes, dtype=DTYPE))


def build_model(cfg, init_seed=0):
    """Deterministic He-normal body, unit/zero GN affine, all-zero head."""
    cfg.validate()
    return Model(cfg, Prng(init_seed))


def replace_head(model, new_num_classes):
    """Swap in a fresh zero head of the requested width; the body is untouched."""
    if int(new_num_classes) < 1:
        raise ConfigError("new_num_classes must be >= 1")
    model.head = zero_head(model.feature_dim, int(new_num_classes))
    model.config.num_classes = int(new_num_classes)
    return model
