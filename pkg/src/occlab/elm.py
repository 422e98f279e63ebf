"""Numerical kernels for RGB-event feature fusion during 2D-to-3D lifting.

Implements the three fusion paradigms (elementwise 2D fusion, key/value
fusion during lifting, post-lifting 3D fusion), the gated key/value fusion
block (additive pre-fusion, dual-branch scaled-dot-product attention, a
sigmoid gate blending the two modalities), and single-step deformable voxel
querying with bilinear sampling.

Everything is float64 with hand-written backward passes so gradients can be
verified against central finite differences. No parameters are trained here;
they are supplied by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError, ValidationError

DEFAULT_LOCAL_WINDOW = 7

_GATE_LO = np.nextafter(0.0, 1.0)
_GATE_HI = np.nextafter(1.0, 0.0)


def _check_finite(data, what):
    if not np.isfinite(data).all():
        raise ValidationError(f"{what} contains non-finite values")


class FeatureMap2D:
    """2D feature map, data shaped (b, c, d): b rows, c columns, d features."""

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeError(f"2D feature map must be (b, c, d), got {data.shape}")
        _check_finite(data, "feature map")
        self.data = data

    @property
    def shape(self):
        return self.data.shape


class ProposalFeatures:
    """Per-token features, data shaped (n, d)."""

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError(f"proposal features must be (n, d), got {data.shape}")
        _check_finite(data, "proposal features")
        self.data = data

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def d(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


class VolumeFeatures:
    """3D volume features, data shaped (h, w, c, d)."""

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 4:
            raise ShapeError(f"volume features must be (h, w, c, d), got {data.shape}")
        _check_finite(data, "volume features")
        self.data = data

    @property
    def shape(self):
        return self.data.shape


class GateField:
    """Per-token, per-feature blend weights, strictly inside (0, 1)."""

    __slots__ = ("w",)

    def __init__(self, w):
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError(f"gate must be (n, d), got {w.shape}")
        if (w <= 0).any() or (w >= 1).any():
            raise ValidationError("gate entries must lie strictly in (0, 1)")
        self.w = w


def fuse_elementwise(a, b, mode: str = "add"):
    """Fuse two same-kind feature tensors componentwise or by concatenation.

    'add' needs identical shapes; 'concat' needs identical spatial dims and
    stacks along the feature axis, the first argument occupying the leading
    features.
    """
    if type(a) is not type(b):
        raise ShapeError(f"cannot fuse {type(a).__name__} with {type(b).__name__}")
    da, db = a.data, b.data
    if mode == "add":
        if da.shape != db.shape:
            raise ShapeError(f"add requires equal shapes, got {da.shape} and {db.shape}")
        return type(a)(da + db)
    if mode == "concat":
        if da.shape[:-1] != db.shape[:-1]:
            raise ShapeError(
                f"concat requires equal spatial dims, got {da.shape} and {db.shape}"
            )
        return type(a)(np.concatenate([da, db], axis=-1))
    raise ConfigurationError(f"unknown fusion mode {mode!r}")


def _softmax(scores: np.ndarray, mask=None) -> np.ndarray:
    """Row-stabilized softmax; masked-out entries get exactly zero weight."""
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def _attention_forward(q, k, v, mask=None):
    d = q.shape[1]
    scores = (q @ k.T) / np.sqrt(d)
    weights = _softmax(scores, mask)
    return weights @ v, weights


def _attention_backward(d_out, q, k, v, weights, mask=None):
    d = q.shape[1]
    dv = weights.T @ d_out
    dw = d_out @ v.T
    ds = weights * (dw - (dw * weights).sum(axis=1, keepdims=True))
    if mask is not None:
        ds = np.where(mask, ds, 0.0)
    dq = ds @ k / np.sqrt(d)
    dk = ds.T @ q / np.sqrt(d)
    return dq, dk, dv


def attention(q: ProposalFeatures, k: ProposalFeatures, v: ProposalFeatures) -> ProposalFeatures:
    """softmax(Q K^T / sqrt(d)) V with numerically stabilized softmax."""
    if q.d != k.d:
        raise ShapeError(f"query dim {q.d} != key dim {k.d}")
    if k.n != v.n:
        raise ShapeError(f"key count {k.n} != value count {v.n}")
    out, _ = _attention_forward(q.data, k.data, v.data)
    return ProposalFeatures(out)


def _band_mask(n: int, window: int) -> np.ndarray:
    lo = window // 2
    hi = window - 1 - lo
    i = np.arange(n)
    return (i[None, :] >= i[:, None] - lo) & (i[None, :] <= i[:, None] + hi)


@dataclass(frozen=True)
class ElmGateParams:
    """Gate configuration: local window width, gate granularity, and an
    optional additive bias on the aggregated key features (stand-in for
    positional/source embeddings)."""

    window: int = DEFAULT_LOCAL_WINDOW
    per_token: bool = False
    key_bias: np.ndarray | None = None

    def __post_init__(self):
        if self.window < 1:
            raise ConfigurationError(f"local window must be >= 1, got {self.window}")


def _elm_fuse_forward(fk_img, fv_img, fk_event, fv_event, params: ElmGateParams):
    n, d = fk_img.shape
    fk_add = fk_img + fk_event
    fv_add = fv_img + fv_event
    qk = fk_add if params.key_bias is None else fk_add + params.key_bias

    mask = _band_mask(n, params.window)
    g_out, g_w = _attention_forward(qk, qk, fv_add)
    l_out, l_w = _attention_forward(qk, qk, fv_add, mask)
    s = g_out + l_out
    if params.per_token:
        s = np.broadcast_to(s.mean(axis=1, keepdims=True), (n, d))
    w = np.clip(1.0 / (1.0 + np.exp(-s)), _GATE_LO, _GATE_HI)

    # (1-w)*img + w*event, written so equal modalities reproduce exactly
    fk_fusion = fk_img + w * (fk_event - fk_img)
    fv_fusion = fv_img + w * (fv_event - fv_img)
    cache = (fk_img, fv_img, fk_event, fv_event, qk, fv_add, g_w, l_w, mask, w, params)
    return fk_fusion, fv_fusion, w, cache


def _elm_fuse_backward(cache, d_fk_fusion, d_fv_fusion):
    fk_img, fv_img, fk_event, fv_event, qk, fv_add, g_w, l_w, mask, w, params = cache
    n, d = fk_img.shape

    d_fk_img = (1.0 - w) * d_fk_fusion
    d_fk_event = w * d_fk_fusion
    d_fv_img = (1.0 - w) * d_fv_fusion
    d_fv_event = w * d_fv_fusion

    dw = d_fk_fusion * (fk_event - fk_img) + d_fv_fusion * (fv_event - fv_img)
    ds = dw * w * (1.0 - w)
    if params.per_token:
        ds = np.broadcast_to(ds.sum(axis=1, keepdims=True) / d, (n, d))

    dq_g, dk_g, dv_g = _attention_backward(ds, qk, qk, fv_add, g_w)
    dq_l, dk_l, dv_l = _attention_backward(ds, qk, qk, fv_add, l_w, mask)
    d_qk = dq_g + dk_g + dq_l + dk_l
    d_fv_add = dv_g + dv_l

    d_fk_img += d_qk
    d_fk_event += d_qk
    d_fv_img += d_fv_add
    d_fv_event += d_fv_add
    return d_fk_img, d_fv_img, d_fk_event, d_fv_event


def elm_fuse(
    fk_img: ProposalFeatures,
    fv_img: ProposalFeatures,
    fk_event: ProposalFeatures,
    fv_event: ProposalFeatures,
    params: ElmGateParams | None = None,
):
    """Gated key/value fusion of image and event proposal features.

    The modalities are first summed; a global attention branch over all
    tokens and a local branch restricted to a window of `params.window`
    tokens (in token order) both attend with Q = K = the aggregated keys and
    V = the aggregated values. The sigmoid of their sum gates a componentwise
    convex combination of the two modalities.

    Returns (fused keys, fused values, gate).
    """
    params = params or ElmGateParams()
    shapes = {f.shape for f in (fk_img, fv_img, fk_event, fv_event)}
    if len(shapes) != 1:
        raise ShapeError(f"all four inputs must share (n, d), got {sorted(shapes)}")
    if params.key_bias is not None and np.shape(params.key_bias) != fk_img.shape:
        raise ShapeError(
            f"key bias shape {np.shape(params.key_bias)} != features {fk_img.shape}"
        )
    fk_fusion, fv_fusion, w, _ = _elm_fuse_forward(
        fk_img.data, fv_img.data, fk_event.data, fv_event.data, params
    )
    return ProposalFeatures(fk_fusion), ProposalFeatures(fv_fusion), GateField(w)


def _bilinear_gather(fmap, x, y):
    """Bilinear samples with zero padding outside the map.

    fmap is (rows, cols, d); x indexes columns, y rows. Returns the sampled
    values plus the pieces the backward pass needs.
    """
    rows, cols, d = fmap.shape
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    corners = []
    for dy in (0, 1):
        for dx in (0, 1):
            cx = x0 + dx
            cy = y0 + dy
            ok = (cx >= 0) & (cx < cols) & (cy >= 0) & (cy < rows)
            vals = np.zeros((len(x), d))
            vals[ok] = fmap[cy[ok], cx[ok]]
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            corners.append((cx, cy, ok, vals, wgt, dx, dy))
    out = sum(w[:, None] * v for _, _, _, v, w, _, _ in corners)
    return out, corners, fx, fy


def _deformable_forward(fmap, refs, offsets, weights):
    nq, p, _ = offsets.shape
    loc = refs[:, None, :] + offsets  # (nq, p, 2)
    x = loc[..., 0].reshape(-1)
    y = loc[..., 1].reshape(-1)
    alpha = _softmax(weights)  # (nq, p)
    sampled, corners, fx, fy = _bilinear_gather(fmap, x, y)
    sampled = sampled.reshape(nq, p, -1)
    out = (alpha[:, :, None] * sampled).sum(axis=1)
    cache = (fmap.shape, corners, fx, fy, sampled, alpha, nq, p)
    return out, cache


def _deformable_backward(cache, d_out):
    shape, corners, fx, fy, sampled, alpha, nq, p = cache
    d = shape[2]

    d_alpha = (d_out[:, None, :] * sampled).sum(axis=2)
    d_weights = alpha * (d_alpha - (d_alpha * alpha).sum(axis=1, keepdims=True))

    d_sample = (alpha[:, :, None] * d_out[:, None, :]).reshape(nq * p, d)
    d_fmap = np.zeros(shape)
    dx_acc = np.zeros(nq * p)
    dy_acc = np.zeros(nq * p)
    for cx, cy, ok, vals, wgt, dxc, dyc in corners:
        np.add.at(d_fmap, (cy[ok], cx[ok]), wgt[ok, None] * d_sample[ok])
        gx = (1.0 if dxc else -1.0) * (fy if dyc else 1.0 - fy)
        gy = (1.0 if dyc else -1.0) * (fx if dxc else 1.0 - fx)
        contrib = (d_sample * vals).sum(axis=1)
        dx_acc += contrib * gx
        dy_acc += contrib * gy
    d_offsets = np.stack([dx_acc, dy_acc], axis=-1).reshape(nq, p, 2)
    d_refs = d_offsets.sum(axis=1)
    return d_fmap, d_refs, d_offsets, d_weights


def deformable_query(
    q_voxel: VolumeFeatures,
    fv_fusion: FeatureMap2D,
    refs: np.ndarray,
    offsets: np.ndarray,
    weights: np.ndarray,
) -> VolumeFeatures:
    """Deformable sampling of a fused 2D value map into voxel features.

    Each voxel query samples the map at `ref + offset_p` for P points, with
    softmax-normalized per-point weights; samples outside the map contribute
    zero. The query features fix the output layout (h, w, c); the feature
    dimension comes from the value map.
    """
    h, w, c, _ = q_voxel.shape
    nq = h * w * c
    refs = np.asarray(refs, dtype=np.float64).reshape(nq, 2)
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.ndim != 3 or offsets.shape[0] != nq or offsets.shape[2] != 2:
        raise ShapeError(f"offsets must be ({nq}, P, 2), got {offsets.shape}")
    p = offsets.shape[1]
    if p < 1:
        raise ConfigurationError("at least one sampling point is required")
    weights = np.asarray(weights, dtype=np.float64).reshape(nq, p)
    out, _ = _deformable_forward(fv_fusion.data, refs, offsets, weights)
    return VolumeFeatures(out.reshape(h, w, c, -1))


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _fd_grad(loss_fn, arrays, index, h=1e-6):
    a = arrays[index]
    grad = np.zeros_like(a)
    flat = a.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = loss_fn(arrays)
        flat[i] = orig - h
        lo = loss_fn(arrays)
        flat[i] = orig
        g[i] = (hi - lo) / (2.0 * h)
    return grad


def grad_check(op: str, shapes: dict | None = None, seed: int = 0) -> float:
    """Verify analytic gradients against central finite differences.

    The scalar loss is the sum of the op's primary outputs. For every
    differentiable input the analytic gradient is compared with a step-1e-6
    central difference; the returned value is the worst error relative to the
    largest gradient magnitude of that input.
    """
    shapes = dict(shapes or {})
    rng = np.random.default_rng(seed)
    n = int(shapes.get("n", 8))
    d = int(shapes.get("d", 4))

    if op == "fuse_add":
        arrays = [rng.standard_normal((n, d)) for _ in range(2)]

        def loss(arrs):
            return float((arrs[0] + arrs[1]).sum())

        analytic = [np.ones((n, d)), np.ones((n, d))]

    elif op == "attention":
        arrays = [rng.standard_normal((n, d)) for _ in range(3)]

        def loss(arrs):
            out, _ = _attention_forward(*arrs)
            return float(out.sum())

        q, k, v = arrays
        out, weights = _attention_forward(q, k, v)
        analytic = list(_attention_backward(np.ones_like(out), q, k, v, weights))

    elif op == "elm_fuse":
        params = ElmGateParams(window=int(shapes.get("W", DEFAULT_LOCAL_WINDOW)))
        arrays = [rng.standard_normal((n, d)) for _ in range(4)]

        def loss(arrs):
            fk, fv, _, _ = _elm_fuse_forward(*arrs, params)
            return float(fk.sum() + fv.sum())

        fk, fv, _, cache = _elm_fuse_forward(*arrays, params)
        analytic = list(_elm_fuse_backward(cache, np.ones_like(fk), np.ones_like(fv)))

    elif op == "deformable_query":
        rows = int(shapes.get("rows", 5))
        cols = int(shapes.get("cols", 6))
        p = int(shapes.get("P", 4))
        nq = int(shapes.get("nq", n))
        fmap = rng.standard_normal((rows, cols, d))
        refs = rng.uniform(0.3, [cols - 1.3, rows - 1.3], size=(nq, 2))
        offsets = rng.uniform(-0.9, 0.9, size=(nq, p, 2))
        weights = rng.standard_normal((nq, p))
        arrays = [fmap, refs, offsets, weights]

        def loss(arrs):
            out, _ = _deformable_forward(arrs[0], arrs[1], arrs[2], arrs[3])
            return float(out.sum())

        out, cache = _deformable_forward(fmap, refs, offsets, weights)
        analytic = list(_deformable_backward(cache, np.ones_like(out)))

    else:
        raise ConfigurationError(f"unknown grad-check op {op!r}")

    worst = 0.0
    for i in range(len(arrays)):
        numeric = _fd_grad(loss, arrays, i)
        worst = max(worst, _rel_error(analytic[i], numeric))
    return worst
