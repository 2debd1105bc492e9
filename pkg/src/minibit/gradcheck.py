"""Finite-difference oracle for every backward pass in the library.

The numeric side differentiates *reference* forward implementations written
here from scratch (shift-and-accumulate convolution, direct normalization
formulas, loop max-pooling). They share no code with the analytic paths in
``layers``/``model``, so an error in either shows up as a disagreement.
Everything runs in float64.
"""

from dataclasses import dataclass, field

import numpy as np

from minibit import layers, metrics
from minibit.errors import ConfigError, OracleError
from minibit.model import PreActBottleneck, ResNetConfig, build_model
from minibit.tensor import Prng

DEFAULT_EPS = 1e-3
REL_FLOOR = 1e-6


def finite_diff_grad(f, x, eps=DEFAULT_EPS, coords=None):
    """Central differences of scalar ``f`` at ``x`` (float64).

    ``coords`` limits evaluation to the given flat indices; other entries are NaN.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.full(flat.shape, np.nan) if coords is not None else np.zeros(flat.shape)
    for i in (range(flat.size) if coords is None else coords):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad.reshape(x.shape)


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)


# ---------------------------------------------------------------------------
# Reference forwards


def ref_conv(x, w, stride=1, pad=0, bias=None):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((n, o, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            y += np.einsum("nchw,oc->nohw", patch, w[:, :, i, j])
    if bias is not None:
        y += bias[None, :, None, None]
    return y


def ref_standardize(w, eps):
    out = np.empty_like(w, dtype=np.float64)
    for o in range(w.shape[0]):
        v = w[o].ravel()
        mu = v.sum() / v.size
        var = ((v - mu) ** 2).sum() / v.size
        out[o] = (w[o] - mu) / np.sqrt(var + eps)
    return out


def ref_group_norm(x, gamma, beta, groups, eps):
    n, c, h, w = x.shape
    per = c // groups
    y = np.empty_like(x, dtype=np.float64)
    for s in range(n):
        for g in range(groups):
            block = x[s, g * per:(g + 1) * per]
            mu = block.sum() / block.size
            var = ((block - mu) ** 2).sum() / block.size
            y[s, g * per:(g + 1) * per] = (block - mu) / np.sqrt(var + eps)
    return y * gamma[None, :, None, None] + beta[None, :, None, None]


def ref_relu(x, trace=None):
    if trace is not None:
        trace.append(x > 0)
    return np.where(x > 0, x, 0.0)


def ref_max_pool(x, k, s, p, trace=None):
    n, c, h, w = x.shape
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    y = np.empty((n, c, ho, wo))
    for oy in range(ho):
        for ox in range(wo):
            y0, x0 = max(oy * s - p, 0), max(ox * s - p, 0)
            y1, x1 = min(oy * s - p + k, h), min(ox * s - p + k, w)
            win = x[:, :, y0:y1, x0:x1].reshape(n, c, -1)
            y[:, :, oy, ox] = win.max(axis=2)
            if trace is not None:
                trace.append(win.argmax(axis=2))
    return y


def ref_avg_pool(x):
    return x.sum(axis=(2, 3)) / (x.shape[2] * x.shape[3])


def ref_dense(x, w, b):
    return np.einsum("nf,of->no", x, w) + b


def ref_softmax_ce(target, logits):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -(target * logp).sum() / logits.shape[0]


def ref_binary_ce(y, z):
    p = 1.0 / (1.0 + np.exp(-z))
    p = np.clip(p, metrics.PROB_CLAMP, 1 - metrics.PROB_CLAMP)
    return -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))


def _ref_conv_layer(conv, p, prefix, x):
    w = p[prefix + ".weight"]
    if conv.ws:
        w = ref_standardize(w, conv.eps)
    return ref_conv(x, w, conv.stride[0], conv.padding[0], p.get(prefix + ".bias"))


def _ref_gn_layer(gn, p, prefix, x):
    return ref_group_norm(x, p[prefix + ".gamma"], p[prefix + ".beta"], gn.groups, gn.eps)


def ref_block(block, p, prefix, x, trace=None):
    pre = prefix + "." if prefix else ""
    a1 = ref_relu(_ref_gn_layer(block.gn1, p, pre + "gn1", x), trace)
    sc = _ref_conv_layer(block.proj, p, pre + "proj", a1) if block.proj is not None else x
    h = _ref_conv_layer(block.conv1, p, pre + "conv1", a1)
    h = _ref_conv_layer(block.conv2, p, pre + "conv2", ref_relu(_ref_gn_layer(block.gn2, p, pre + "gn2", h), trace))
    h = _ref_conv_layer(block.conv3, p, pre + "conv3", ref_relu(_ref_gn_layer(block.gn3, p, pre + "gn3", h), trace))
    return h + sc


def ref_model(model, p, x, trace=None):
    h = _ref_conv_layer(model.root, p, "root.conv", x)
    if model.root_pool is not None:
        h = ref_max_pool(h, 3, 2, 1, trace)
    for si, stage in enumerate(model.stages):
        for bi, block in enumerate(stage):
            h = ref_block(block, p, f"stages.{si}.blocks.{bi}", h, trace)
    h = ref_relu(_ref_gn_layer(model.final_gn, p, "final_gn", h), trace)
    return ref_dense(ref_avg_pool(h), p["head.weight"], p["head.bias"])


# ---------------------------------------------------------------------------
# Layer checks


@dataclass
class GradReport:
    layer: str
    tolerance: float
    max_rel: dict = field(default_factory=dict)
    max_abs: dict = field(default_factory=dict)
    forward_max_abs: float = 0.0
    skipped: int = 0

    @property
    def passed(self):
        return all(v <= self.tolerance for v in self.max_rel.values())

    @property
    def worst(self):
        return max(self.max_rel.values()) if self.max_rel else 0.0

    def table(self):
        width = max([len("tensor")] + [len(k) for k in self.max_rel])
        lines = [f"layer {self.layer}  tol {self.tolerance:g}  "
                 f"{'PASS' if self.passed else 'FAIL'}",
                 f"  {'tensor':<{width}}  {'max_rel':>10}  {'max_abs':>10}"]
        for k in self.max_rel:
            lines.append(f"  {k:<{width}}  {self.max_rel[k]:>10.3e}  {self.max_abs[k]:>10.3e}")
        return "\n".join(lines)


@dataclass
class _Case:
    """Inputs, parameters and the two routes (analytic vs reference) for one check."""
    tensors: dict
    analytic: object  # tensors -> (output, {name: grad of sum(output*R)})
    reference: object  # (tensors, trace) -> output; trace collects relu masks / pool argmaxes
    weight: np.ndarray = None  # projection R; None means the output is already scalar


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


KINK_RETRIES = 3


def _kink_free_diff(scalar, tensors, flat, i, eps):
    orig = flat[i]

    def central(h):
        flat[i] = orig + h
        fp, ok_p = scalar(tensors)
        flat[i] = orig - h
        fm, ok_m = scalar(tensors)
        return (fp - fm) / (2.0 * h), ok_p and ok_m

    try:
        for _ in range(KINK_RETRIES + 1):
            d1, ok1 = central(eps)
            d2, ok2 = central(eps / 2.0)
            if ok1 and ok2:
                # Richardson: cancels the h^2 term of the central difference
                return (4.0 * d2 - d1) / 3.0
            eps /= 10.0
        return None
    finally:
        flat[i] = orig


def _run_case(name, case, tol, eps, rng, limit):
    """Compare on up to ``limit`` coordinates per tensor.

    When the +-eps perturbation of a coordinate flips a ReLU mask or a
    max-pool argmax in the reference forward, the step shrinks tenfold (up to
    ``KINK_RETRIES`` times) and the coordinate is skipped if it still does.
    Central differences across a kink measure nothing. Steps ``eps`` and
    ``eps/2`` are combined by Richardson extrapolation, so strongly curved
    paths (weight standardization over a tiny fan-in) stay within tolerance.
    """
    tensors = {k: np.array(v, dtype=np.float64) for k, v in case.tensors.items()}
    out, grads = case.analytic(tensors)
    base_trace = []
    ref_out = case.reference(tensors, base_trace)
    report = GradReport(name, tol, forward_max_abs=float(np.max(np.abs(np.asarray(out) - ref_out))))

    def scalar(ts):
        trace = []
        y = case.reference(ts, trace)
        val = float(np.sum(y * case.weight)) if case.weight is not None else float(y)
        if not np.isfinite(val):
            raise OracleError(f"non-finite reference value while checking {name}")
        return val, _same(trace, base_trace)

    for key, value in tensors.items():
        if key not in grads:
            continue
        ana = np.asarray(grads[key], dtype=np.float64).reshape(-1)
        flat = value.reshape(-1)
        order = range(flat.size) if flat.size <= limit else rng.permutation(flat.size)
        errs, abs_errs = [], []
        for i in order:
            if len(errs) >= limit:
                break
            num = _kink_free_diff(scalar, tensors, flat, i, eps)
            if num is None:
                report.skipped += 1
                continue
            errs.append(float(relative_error(ana[i], num)))
            abs_errs.append(abs(ana[i] - num))
        if not errs:
            raise OracleError(f"every coordinate of {key} sits on a kink")
        report.max_rel[key] = max(errs)
        report.max_abs[key] = float(max(abs_errs))
    return report


def _away_from_zero(rng, shape, gap=0.05):
    u = rng.uniform_array(int(np.prod(shape)), -1.0, 1.0)
    return (np.sign(u) * (gap + np.abs(u))).reshape(shape)


def _distinct(rng, shape, spacing=0.05):
    n = int(np.prod(shape))
    return (np.array(rng.permutation(n), dtype=np.float64) * spacing).reshape(shape)


def _normal(rng, shape, std=1.0):
    return rng.normal_array(int(np.prod(shape)), 0.0, std).reshape(shape)


def _case_conv(rng, ws):
    stride = 1 + rng.bounded(2)
    x = _normal(rng, (1, 2, 5, 5))
    w = _normal(rng, (3, 2, 3, 3), 0.5)
    b = _normal(rng, (3,), 0.1)

    def analytic(t):
        y, cache = layers.conv2d_forward(t["x"], t["w"], t["b"], stride, 1, ws=ws)
        R = weight
        gx, gw, gb = layers.conv2d_backward(cache, R)
        return y, {"x": gx, "w": gw, "b": gb}

    def reference(t, trace=None):
        w_eff = ref_standardize(t["w"], layers.EPS_WS) if ws else t["w"]
        return ref_conv(t["x"], w_eff, stride, 1, t["b"])

    ho = (5 + 2 - 3) // stride + 1
    weight = _normal(rng, (1, 3, ho, ho))
    return _Case({"x": x, "w": w, "b": b}, analytic, reference, weight)


def _case_gn(rng):
    x = _normal(rng, (2, 4, 3, 3), 2.0) + 0.5
    gamma = 1.0 + _normal(rng, (4,), 0.3)
    beta = _normal(rng, (4,), 0.3)
    weight = _normal(rng, (2, 4, 3, 3))

    def analytic(t):
        y, cache = layers.group_norm_forward(t["x"], t["gamma"], t["beta"], 2)
        gx, gg, gb = layers.group_norm_backward(cache, weight)
        return y, {"x": gx, "gamma": gg, "beta": gb}

    def reference(t, trace=None):
        return ref_group_norm(t["x"], t["gamma"], t["beta"], 2, layers.EPS_GN)

    return _Case({"x": x, "gamma": gamma, "beta": beta}, analytic, reference, weight)


def _case_relu(rng):
    x = _away_from_zero(rng, (2, 3, 4, 4))
    weight = _normal(rng, x.shape)

    def analytic(t):
        return layers.relu(t["x"]), {"x": layers.relu_backward(t["x"], weight)}

    return _Case({"x": x}, analytic, lambda t, trace=None: ref_relu(t["x"], trace), weight)


def _case_maxpool(rng):
    x = _distinct(rng, (2, 2, 6, 6))
    weight = _normal(rng, (2, 2, 3, 3))

    def analytic(t):
        y, cache = layers.max_pool_forward(t["x"], 3, 2, 1)
        return y, {"x": layers.max_pool_backward(cache, weight)}

    return _Case({"x": x}, analytic, lambda t, trace=None: ref_max_pool(t["x"], 3, 2, 1, trace), weight)


def _case_avgpool(rng):
    x = _normal(rng, (2, 3, 4, 5))
    weight = _normal(rng, (2, 3))

    def analytic(t):
        y, cache = layers.global_avg_pool_forward(t["x"])
        return y, {"x": layers.global_avg_pool_backward(cache, weight)}

    return _Case({"x": x}, analytic, lambda t, trace=None: ref_avg_pool(t["x"]), weight)


def _case_dense(rng, corrupt=False):
    x = _normal(rng, (4, 5))
    w = _normal(rng, (3, 5), 0.5)
    b = _normal(rng, (3,), 0.1)
    weight = _normal(rng, (4, 3))

    def analytic(t):
        y, cache = layers.dense_forward(t["x"], t["w"], t["b"])
        gx, gw, gb = layers.dense_backward(cache, weight)
        if corrupt:
            gw = -gw
        return y, {"x": gx, "w": gw, "b": gb}

    return _Case({"x": x, "w": w, "b": b}, analytic,
                 lambda t, trace=None: ref_dense(t["x"], t["w"], t["b"]), weight)


def _randomize_params(params, rng):
    """Replace zero/unit initial values so every gradient path is exercised."""
    out = {}
    for k, v in params.items():
        if k.endswith("gamma"):
            out[k] = 1.0 + _normal(rng, v.shape, 0.2)
        elif k.endswith(("beta", "bias")):
            out[k] = _normal(rng, v.shape, 0.2)
        elif k.startswith("head."):
            out[k] = _normal(rng, v.shape, 0.5)
        else:
            out[k] = np.array(v, dtype=np.float64)
    return out


def _case_block(rng, seed):
    cfg = ResNetConfig(base_width=4, max_groups=2)
    projecting = seed % 2 == 0
    cin, mid, cout = (4, 4, 16) if projecting else (16, 4, 16)
    stride = 2 if projecting else 1
    block = PreActBottleneck(cin, mid, cout, stride, Prng(seed), cfg)
    names = [(f"{ln}.{pn}", layer, pn) for ln, layer in block.named_layers()
             for pn in layer.params()]
    params = _randomize_params({n: getattr(layer, pn) for n, layer, pn in names}, rng)
    x = _normal(rng, (1, cin, 8, 8))
    weight = _normal(rng, (1, cout, 8 // stride, 8 // stride))

    def install(t):
        for n, layer, pn in names:
            setattr(layer, pn, t[n])

    def analytic(t):
        install(t)
        y = block.forward(t["x"])
        gx, grads = block.backward(weight)
        return y, {"x": gx, **grads}

    return _Case({"x": x, **params}, analytic, lambda t, trace=None: ref_block(block, t, "", t["x"], trace), weight)


def _case_model(rng, seed):
    cfg = ResNetConfig.preset("resnet14", base_width=2, max_groups=2, num_classes=2)
    model = build_model(cfg, seed)
    params = _randomize_params(model.params, rng)
    x = _normal(rng, (2, 3, 8, 8))
    weight = _normal(rng, (2, 2))

    def analytic(t):
        _install_model(model, t)
        y = model.forward(t["x"])
        return y, model.backward(weight)

    def reference(t, trace=None):
        return ref_model(model, t, t["x"], trace)

    return _Case({"x": x, **params}, analytic, reference, weight)


def _install_model(model, t):
    for prefix, layer in model.named_layers():
        for pn in layer.params():
            setattr(layer, pn, t[f"{prefix}.{pn}"])


def _case_softmax_ce(rng):
    logits = _normal(rng, (4, 3), 2.0)
    raw = rng.uniform_array(12).reshape(4, 3) + 0.05
    target = raw / raw.sum(axis=1, keepdims=True)

    def analytic(t):
        loss, g = metrics.softmax_cross_entropy(target, t["logits"])
        return loss, {"logits": g}

    return _Case({"logits": logits}, analytic, lambda t, trace=None: ref_softmax_ce(target, t["logits"]))


def _case_binary_ce(rng):
    z = _normal(rng, (6,), 2.0)
    y = np.array([rng.bounded(2) for _ in range(6)], dtype=np.float64)

    def analytic(t):
        loss, g = metrics.binary_cross_entropy_with_logits(y, t["z"])
        return loss, {"z": g}

    return _Case({"z": z}, analytic, lambda t, trace=None: ref_binary_ce(y, t["z"]))


CHECKS = {
    "conv": (lambda rng, seed: _case_conv(rng, ws=False), 1e-3),
    "conv_ws": (lambda rng, seed: _case_conv(rng, ws=True), 1e-3),
    "groupnorm": (lambda rng, seed: _case_gn(rng), 1e-3),
    "relu": (lambda rng, seed: _case_relu(rng), 1e-3),
    "maxpool": (lambda rng, seed: _case_maxpool(rng), 1e-3),
    "avgpool": (lambda rng, seed: _case_avgpool(rng), 1e-3),
    "dense": (lambda rng, seed: _case_dense(rng), 1e-3),
    "block": (_case_block, 1e-3),
    "model": (_case_model, 1e-2),
    "softmax_ce": (lambda rng, seed: _case_softmax_ce(rng), 1e-3),
    "binary_ce": (lambda rng, seed: _case_binary_ce(rng), 1e-3),
}
# sign-flipped dense weight gradient; must fail
NEGATIVE_CONTROL = "negative_control"
_CONTROLS = {NEGATIVE_CONTROL: (lambda rng, seed: _case_dense(rng, corrupt=True), 1e-3)}

COORD_LIMIT = {"model": 3, "block": 6}


def check_layer(name, seed=0, tol=None, eps=DEFAULT_EPS):
    """Compare analytic gradients with central differences of the reference forward."""
    table = {**CHECKS, **_CONTROLS}
    if name not in table:
        raise ConfigError(f"unknown layer {name!r}; choose from {sorted(table)}")
    build, default_tol = table[name]
    rng = Prng(seed, 0x9C)
    case = build(rng, seed)
    return _run_case(name, case, default_tol if tol is None else tol, eps, rng,
                     COORD_LIMIT.get(name, 10**9))


def check_all(seeds=range(20), tol=None, names=None):
    return [check_layer(n, s, tol) for n in (names or CHECKS) for s in seeds]
