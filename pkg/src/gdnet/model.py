"""GDNet: three global dynamic convolution layers and a linear classifier.

Each GDConv layer modulates its base kernel ``W`` per input patch:

    G  = relu(norm(x.reshape(c, r*r) @ Ws + bs))          c×m
    C  = relu(norm((G.T @ Wc + bc).T))                    n×m
    M  = sigmoid(expand_g(G)[None] + expand_c(C)[:, None])  n×c×k×k
    y  = conv_same(x, M * W)

``expand_g`` maps each of the c rows of G from m to k*k values and is shared
across output channels; ``expand_c`` does the same for the n rows of C and is
shared across input channels.
"""
from __future__ import annotations

import enum
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor_numerics as tn
from .errors import CacheError, ConfigurationError, DimensionError, FormatError, VersionError
from .tensor_numerics import GradSlot


class ConvMode(str, enum.Enum):
    GDCONV = "gdconv"
    STATIC = "static"


class FeatureStage(str, enum.Enum):
    BEFORE_LAST = "before_last"
    AFTER_LAST = "after_last"


@dataclass(frozen=True)
class ModelConfig:
    r: int = 12
    h1: int = 16
    h2: int = 32
    h3: int = 6
    m: int = 4
    k: int = 3
    conv_mode: ConvMode = ConvMode.GDCONV

    def __post_init__(self):
        object.__setattr__(self, "conv_mode", ConvMode(self.conv_mode))
        for name in ("r", "h1", "h2", "h3", "m", "k"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.k % 2 == 0:
            raise ConfigurationError(f"kernel size k must be odd, got {self.k}")
        if self.m < 2:
            # row normalization over the m axis needs at least two entries
            raise ConfigurationError(f"aggregation width m must be >= 2, got {self.m}")

    @property
    def channels(self) -> tuple[int, ...]:
        return (3, self.h1, self.h2, self.h3)

    @property
    def feature_width(self) -> int:
        return self.h3 * self.r * self.r


LAYER_PARAMS = (
    "base_kernel",
    "spatial_weight", "spatial_bias", "spatial_scale", "spatial_shift",
    "channel_weight", "channel_bias", "channel_scale", "channel_shift",
    "expand_g_weight", "expand_g_bias",
    "expand_c_weight", "expand_c_bias",
)

# parameters the STATIC ablation never touches
MODULATION_PARAMS = LAYER_PARAMS[1:]


def _layer_shapes(c, n, k, m, r):
    kk = k * k
    return {
        "base_kernel": (n, c, k, k),
        "spatial_weight": (r * r, m), "spatial_bias": (m,),
        "spatial_scale": (m,), "spatial_shift": (m,),
        "channel_weight": (c, n), "channel_bias": (n,),
        "channel_scale": (m,), "channel_shift": (m,),
        "expand_g_weight": (m, kk), "expand_g_bias": (kk,),
        "expand_c_weight": (m, kk), "expand_c_bias": (kk,),
    }


def _fan_in(name, c, k, m, r):
    return {"base_kernel": c * k * k, "spatial_weight": r * r, "channel_weight": c,
            "expand_g_weight": m, "expand_c_weight": m}[name]


@dataclass
class GDConvCache:
    layer_id: int
    x: np.ndarray
    cols: np.ndarray
    g_pre: np.ndarray
    g_norm: np.ndarray
    G: np.ndarray
    c_pre: np.ndarray
    c_norm: np.ndarray
    C: np.ndarray
    M: np.ndarray | None
    kernel: np.ndarray  # modulated (B×n×c·k·k) or static (n×c·k·k)


class GDConvLayer:
    def __init__(self, c: int, n: int, k: int, m: int, r: int, dtype=np.float32):
        if k % 2 == 0:
            raise ConfigurationError(f"kernel size k must be odd, got {k}")
        self.c, self.n, self.k, self.m, self.r = c, n, k, m, r
        self.params = {name: GradSlot(np.zeros(shape, dtype=dtype))
                       for name, shape in _layer_shapes(c, n, k, m, r).items()}

    def __getitem__(self, name) -> np.ndarray:
        return self.params[name].value

    def init(self, rng: np.random.Generator):
        for name in LAYER_PARAMS:
            slot = self.params[name]
            if name.endswith("_scale"):
                slot.value[...] = 1
            elif name.endswith(("_bias", "_shift")):
                slot.value[...] = 0
            else:
                bound = np.sqrt(6.0 / _fan_in(name, self.c, self.k, self.m, self.r))
                slot.value[...] = rng.uniform(-bound, bound, size=slot.shape)

    # -------------------------------------------------------------- forward

    def modulation(self, x: np.ndarray):
        """Aggregations and the sigmoid gate M (B×n×c×k·k) for a batch."""
        b = x.shape[0]
        p = self.params
        xs = x.reshape(b, self.c, self.r * self.r)
        g_pre = tn.linear(xs, p["spatial_weight"].value, p["spatial_bias"].value)
        g_norm = tn.row_norm(g_pre, p["spatial_scale"].value, p["spatial_shift"].value)
        G = np.maximum(g_norm, 0)
        c_pre = tn.linear(G.transpose(0, 2, 1), p["channel_weight"].value,
                          p["channel_bias"].value).transpose(0, 2, 1)
        c_norm = tn.row_norm(c_pre, p["channel_scale"].value, p["channel_shift"].value)
        C = np.maximum(c_norm, 0)
        eg = tn.linear(G, p["expand_g_weight"].value, p["expand_g_bias"].value)   # B,c,kk
        ec = tn.linear(C, p["expand_c_weight"].value, p["expand_c_bias"].value)   # B,n,kk
        M = tn.sigmoid(ec[:, :, None, :] + eg[:, None, :, :])
        return g_pre, g_norm, G, c_pre, c_norm, C, M

    def check_input(self, x):
        if x.ndim != 4 or x.shape[1:] != (self.c, self.r, self.r):
            raise DimensionError(f"layer expects B×{self.c}×{self.r}×{self.r}, got {x.shape}")

    def forward(self, x: np.ndarray, mode: ConvMode = ConvMode.GDCONV):
        """B×c×r×r -> (B×n×r×r, cache)."""
        self.check_input(x)
        b = x.shape[0]
        ckk = self.c * self.k * self.k
        cols = tn.im2col(x, self.k)
        W = self.params["base_kernel"].value.reshape(self.n, self.c, self.k * self.k)
        if mode is ConvMode.STATIC:
            kernel = W.reshape(self.n, ckk)
            inter = (None,) * 7
        else:
            inter = self.modulation(x)
            kernel = (inter[-1] * W).reshape(b, self.n, ckk)
        out = (kernel @ cols).reshape(b, self.n, self.r, self.r)
        cache = GDConvCache(id(self), x, cols, *inter, kernel=kernel)
        return out, cache

    def modulated_kernel(self, x: np.ndarray) -> np.ndarray:
        """W' for each sample of a batch, shaped B×n×c×k×k."""
        self.check_input(x)
        M = self.modulation(x)[-1]
        W = self.params["base_kernel"].value.reshape(self.n, self.c, self.k * self.k)
        return (M * W).reshape(x.shape[0], self.n, self.c, self.k, self.k)

    # -------------------------------------------------------------- backward

    def backward(self, cache: GDConvCache, upstream: np.ndarray, input_grad: bool = True):
        """Accumulate parameter gradients into the slots; return grad wrt x.

        With ``input_grad=False`` only the aggregation path reaches x, so the
        return value is None.
        """
        if cache.layer_id != id(self):
            raise CacheError("cache was produced by a different layer")
        b = cache.x.shape[0]
        if upstream.shape != (b, self.n, self.r, self.r):
            raise CacheError(f"upstream {upstream.shape} does not match cached forward of batch {b}")
        p = self.params
        n, c, kk = self.n, self.c, self.k * self.k
        u = upstream.reshape(b, n, self.r * self.r)
        g_kernel = u @ cache.cols.transpose(0, 2, 1)                 # B,n,ckk
        gx = None
        if input_grad:
            kernel = cache.kernel.reshape(cache.kernel.shape[:-1] + (c, self.k, self.k))
            gx = tn.conv2d_same(upstream, tn.flip_transpose(kernel))
        if cache.M is None:
            p["base_kernel"].grad += g_kernel.sum(axis=0).reshape(n, c, self.k, self.k)
            return gx

        g_kernel = g_kernel.reshape(b, n, c, kk)
        W = p["base_kernel"].value.reshape(n, c, kk)
        M = cache.M
        p["base_kernel"].grad += (g_kernel * M).sum(axis=0).reshape(n, c, self.k, self.k)
        g_mpre = g_kernel * W * M * (1 - M)
        g_ec = g_mpre.sum(axis=2)   # B,n,kk
        g_eg = g_mpre.sum(axis=1)   # B,c,kk

        gC, gw, gb = tn.linear_grad(cache.C, p["expand_c_weight"].value, g_ec)
        p["expand_c_weight"].grad += gw
        p["expand_c_bias"].grad += gb
        gG, gw, gb = tn.linear_grad(cache.G, p["expand_g_weight"].value, g_eg)
        p["expand_g_weight"].grad += gw
        p["expand_g_bias"].grad += gb

        g_cnorm = gC * (cache.c_norm > 0)
        g_cpre, gs, gsh = tn.row_norm_grad(cache.c_pre, p["channel_scale"].value, g_cnorm)
        p["channel_scale"].grad += gs
        p["channel_shift"].grad += gsh
        gGt, gw, gb = tn.linear_grad(cache.G.transpose(0, 2, 1), p["channel_weight"].value,
                                     g_cpre.transpose(0, 2, 1))
        p["channel_weight"].grad += gw
        p["channel_bias"].grad += gb
        gG = gG + gGt.transpose(0, 2, 1)

        g_gnorm = gG * (cache.g_norm > 0)
        g_gpre, gs, gsh = tn.row_norm_grad(cache.g_pre, p["spatial_scale"].value, g_gnorm)
        p["spatial_scale"].grad += gs
        p["spatial_shift"].grad += gsh
        xs = cache.x.reshape(b, c, self.r * self.r)
        gxs, gw, gb = tn.linear_grad(xs, p["spatial_weight"].value, g_gpre)
        p["spatial_weight"].grad += gw
        p["spatial_bias"].grad += gb
        return None if gx is None else gx + gxs.reshape(cache.x.shape)

    # -------------------------------------------------------------- accounting

    def flops(self, mode: ConvMode) -> int:
        c, n, k, m, r = self.c, self.n, self.k, self.m, self.r
        kk, rr = k * k, r * r
        conv = 2 * n * c * kk * rr
        if mode is ConvMode.STATIC:
            return conv
        spatial = 2 * c * rr * m + c * m            # matmul + bias
        spatial += 4 * c * m + c * m                # norm (center, scale, affine x2) + relu
        channel = 2 * c * n * m + n * m + 4 * n * m + n * m
        expand = (2 * m * kk + kk) * (c + n)
        gate = 2 * n * c * kk                        # add + sigmoid
        modulate = n * c * kk
        return conv + spatial + channel + expand + gate + modulate


def gdconv_forward(layer: GDConvLayer, x: np.ndarray, mode: ConvMode = ConvMode.GDCONV):
    """Single-sample form: c×r×r -> (n×r×r, cache)."""
    out, cache = layer.forward(np.asarray(x)[None], ConvMode(mode))
    return out[0], cache


def gdconv_backward(layer: GDConvLayer, cache: GDConvCache, upstream: np.ndarray):
    """Single-sample form. Returns ``(grad_x, {param name: grad})``.

    Parameter gradients are returned fresh; the layer's slots are left as
    they were.
    """
    saved = {name: slot.grad.copy() for name, slot in layer.params.items()}
    for slot in layer.params.values():
        slot.zero_grad()
    try:
        gx = layer.backward(cache, np.asarray(upstream)[None])
        grads = {name: slot.grad.copy() for name, slot in layer.params.items()}
    finally:
        for name, slot in layer.params.items():
            slot.grad[...] = saved[name]
    return gx[0], grads


@dataclass
class ForwardTrace:
    caches: list
    pre_activations: list
    features: np.ndarray
    batch: int


class GDNetModel:
    def __init__(self, config: ModelConfig | None = None, dtype=np.float32):
        self.config = config or ModelConfig()
        cfg = self.config
        ch = cfg.channels
        self.dtype = np.dtype(dtype)
        self.layers = [GDConvLayer(ch[i], ch[i + 1], cfg.k, cfg.m, cfg.r, dtype) for i in range(3)]
        self.classifier = {
            "weight": GradSlot(np.zeros((cfg.feature_width, 2), dtype=dtype)),
            "bias": GradSlot(np.zeros(2, dtype=dtype)),
        }

    @property
    def conv_mode(self) -> ConvMode:
        return self.config.conv_mode

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name in LAYER_PARAMS:
                yield f"layer{i + 1}.{name}", layer.params[name]
        yield "classifier.weight", self.classifier["weight"]
        yield "classifier.bias", self.classifier["bias"]

    def parameters(self) -> list[GradSlot]:
        return [slot for _, slot in self.named_parameters()]

    def zero_grad(self):
        for slot in self.parameters():
            slot.zero_grad()

    def astype(self, dtype) -> "GDNetModel":
        other = GDNetModel(self.config, dtype)
        for (_, dst), src in zip(other.named_parameters(), self.parameters()):
            dst.value[...] = src.value
        return other

    def check_batch(self, batch):
        r = self.config.r
        if batch.ndim != 4 or batch.shape[1:] != (3, r, r):
            raise DimensionError(f"model expects B×3×{r}×{r}, got {batch.shape}")

    def forward(self, batch: np.ndarray, keep_trace: bool = False, stop_before_last: bool = False):
        self.check_batch(batch)
        x = np.asarray(batch, dtype=self.dtype)
        caches, pre = [], []
        for i, layer in enumerate(self.layers):
            if stop_before_last and i == 2:
                return x.reshape(x.shape[0], -1)
            y, cache = layer.forward(x, self.conv_mode)
            if keep_trace:
                caches.append(cache)
            if i < 2:
                pre.append(y)
                x = np.maximum(y, 0)
            else:
                x = y
        features = x.reshape(x.shape[0], -1)
        logits = tn.linear(features, self.classifier["weight"].value, self.classifier["bias"].value)
        trace = ForwardTrace(caches, pre, features, x.shape[0]) if keep_trace else None
        return logits, features, trace

    def backward(self, trace: ForwardTrace, grad_logits: np.ndarray, input_grad: bool = False):
        """Accumulate gradients of all parameters.

        Returns the gradient wrt the input batch when ``input_grad`` is set.
        """
        gf, gw, gb = tn.linear_grad(trace.features, self.classifier["weight"].value, grad_logits)
        self.classifier["weight"].grad += gw
        self.classifier["bias"].grad += gb
        r = self.config.r
        g = gf.reshape(trace.batch, self.config.h3, r, r)
        for i in (2, 1, 0):
            g = self.layers[i].backward(trace.caches[i], g, input_grad=input_grad or i > 0)
            if i > 0:
                g = g * (trace.pre_activations[i - 1] > 0)
        return g


def init_model(config: ModelConfig | None = None, seed: int = 0, dtype=np.float32) -> GDNetModel:
    model = GDNetModel(config or ModelConfig(), dtype)
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        layer.init(rng)
    w = model.classifier["weight"]
    bound = np.sqrt(6.0 / model.config.feature_width)
    w.value[...] = rng.uniform(-bound, bound, size=w.shape)
    return model


def model_forward(model: GDNetModel, batch: np.ndarray):
    """Returns ``(logits B×2, features B×(h3·r²))``."""
    logits, features, _ = model.forward(batch)
    return logits, features


# ------------------------------------------------------------------ summary

FLOP_CONVENTION = ("2 FLOPs per multiply-add in convolutions and linear maps; "
                   "1 FLOP per elementwise op (bias add, norm step, activation, gate add, modulation)")


@dataclass
class ModelSummary:
    param_count: int
    flop_count: int
    per_tensor: dict = field(default_factory=dict)
    convention: str = FLOP_CONVENTION

    def table(self) -> str:
        lines = [f"{'tensor':<28} {'shape':<18} {'params':>8}"]
        for name, shape in self.per_tensor.items():
            lines.append(f"{name:<28} {str(tuple(shape)):<18} {int(np.prod(shape)):>8}")
        lines.append(f"{'total parameters':<47} {self.param_count:>8}")
        lines.append(f"{'FLOPs per sample':<47} {self.flop_count:>8}")
        lines.append(f"FLOP convention: {self.convention}")
        return "\n".join(lines)


def model_summary(model: GDNetModel) -> ModelSummary:
    shapes = {name: slot.shape for name, slot in model.named_parameters()}
    params = sum(int(np.prod(s)) for s in shapes.values())
    fw = model.config.feature_width
    flops = sum(layer.flops(model.conv_mode) for layer in model.layers)
    # inter-layer ReLUs after layers 1 and 2, then the classifier
    flops += (model.config.h1 + model.config.h2) * model.config.r ** 2
    flops += 2 * fw * 2 + 2
    return ModelSummary(params, flops, shapes)


# ------------------------------------------------------------------ features

def dump_features(model: GDNetModel, samples, source, path=None, stage=FeatureStage.AFTER_LAST,
                  chunk: int = 512) -> str:
    """CSV rows ``row,col,label,f0,...`` for every sample; writes to ``path`` if given."""
    stage = FeatureStage(stage)
    buf = io.StringIO()
    width = None
    for start in range(0, len(samples), chunk):
        coords = samples.coords[start:start + chunk]
        batch = source.patches(coords[:, 0], coords[:, 1])
        if stage is FeatureStage.BEFORE_LAST:
            feats = model.forward(batch, stop_before_last=True)
        else:
            feats = model.forward(batch)[1]
        if width is None:
            width = feats.shape[1]
            buf.write(",".join(["row", "col", "label"] + [f"f{i}" for i in range(width)]) + "\n")
        labels = samples.labels[start:start + chunk]
        for (i, j), lab, f in zip(coords, labels, feats):
            buf.write(f"{int(i)},{int(j)},{int(lab)}," + ",".join(repr(float(v)) for v in f) + "\n")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


# ------------------------------------------------------------------ checkpoints

MAGIC = b"GDNT"
VERSION = 1


def save_checkpoint(model: GDNetModel, path) -> None:
    cfg = asdict(model.config)
    cfg["conv_mode"] = model.config.conv_mode.value
    tensors = [{"name": name, "shape": list(slot.shape)} for name, slot in model.named_parameters()]
    header = json.dumps({"config": cfg, "tensors": tensors}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, slot in model.named_parameters():
            fh.write(np.ascontiguousarray(slot.value, dtype="<f4").tobytes())


def load_checkpoint(path) -> GDNetModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a GDNT checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
        model = GDNetModel(ModelConfig(**header["config"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    expected = list(model.named_parameters())
    if len(header["tensors"]) != len(expected):
        raise FormatError(f"{path}: tensor list does not match the model layout")
    offset = 12 + hlen
    for entry, (name, slot) in zip(header["tensors"], expected):
        if entry["name"] != name or tuple(entry["shape"]) != slot.shape:
            raise FormatError(f"{path}: tensor {entry['name']} {entry['shape']} does not match "
                              f"expected {name} {list(slot.shape)}")
        nbytes = 4 * slot.value.size
        chunk = data[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"{path}: truncated payload in tensor {name}")
        slot.value[...] = np.frombuffer(chunk, dtype="<f4").reshape(slot.shape)
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after payload")
    return model
