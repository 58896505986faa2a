"""Tiny segmentation network with exact hand-written reverse-mode gradients.

Architecture (all same-resolution, zero padding 1 on the 3x3 convs):

    image (H,W,3)
      -> conv3x3 -> relu -> conv3x3 -> relu          encoder features (H,W,F)
      -> 1x1 conv                                     seg logits (H,W,C)
      -> 1x1 conv -> relu -> 1x1 conv                 representation (H,W,D)
      -> global average pool -> linear                image logits (C,)

The graph is fixed and purely feed-forward, so the backward pass below is
the exact adjoint of ``forward`` and is checked against central finite
differences in the test suite.
"""

import dataclasses
import json

import numpy as np

from . import tensorio
from .numerics import assert_finite, softmax


@dataclasses.dataclass
class ModelParams:
    conv1_w: np.ndarray  # (3, 3, 3, F)
    conv1_b: np.ndarray  # (F,)
    conv2_w: np.ndarray  # (3, 3, F, F)
    conv2_b: np.ndarray  # (F,)
    seg_w: np.ndarray    # (F, C)
    seg_b: np.ndarray    # (C,)
    rep1_w: np.ndarray   # (F, F//2)
    rep1_b: np.ndarray   # (F//2,)
    rep2_w: np.ndarray   # (F//2, D)
    rep2_b: np.ndarray   # (D,)
    cls_w: np.ndarray    # (F, C)
    cls_b: np.ndarray    # (C,)

    FIELDS = (
        "conv1_w", "conv1_b", "conv2_w", "conv2_b", "seg_w", "seg_b",
        "rep1_w", "rep1_b", "rep2_w", "rep2_b", "cls_w", "cls_b",
    )

    def named(self):
        return [(name, getattr(self, name)) for name in self.FIELDS]

    def copy(self):
        return ModelParams(**{n: a.copy() for n, a in self.named()})

    def zeros_like(self):
        return ModelParams(**{n: np.zeros_like(a) for n, a in self.named()})

    @property
    def sizes(self):
        f = self.conv1_w.shape[3]
        c = self.seg_w.shape[1]
        d = self.rep2_w.shape[1]
        return f, c, d


@dataclasses.dataclass
class ModelOutputs:
    logits: np.ndarray      # (H, W, C)
    prob: np.ndarray        # (H, W, C)
    repr: np.ndarray        # (H, W, D)
    cls_logits: np.ndarray  # (C,)
    feat: np.ndarray        # (H, W, F) encoder output, used for CAMs


def init_params(seed, features=16, classes=6, embed_dim=16):
    """Kaiming-style fan-in uniform weights, zero biases, seeded."""
    if features % 2 != 0:
        raise ValueError("features must be even (representation head halves them)")
    if classes < 2 or embed_dim < 2:
        raise ValueError("need at least 2 classes and a 2-dim embedding")
    rng = np.random.default_rng(seed)

    def w(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    f, c, d = features, classes, embed_dim
    return ModelParams(
        conv1_w=w((3, 3, 3, f), 9 * 3),
        conv1_b=np.zeros(f),
        conv2_w=w((3, 3, f, f), 9 * f),
        conv2_b=np.zeros(f),
        seg_w=w((f, c), f),
        seg_b=np.zeros(c),
        rep1_w=w((f, f // 2), f),
        rep1_b=np.zeros(f // 2),
        rep2_w=w((f // 2, d), f // 2),
        rep2_b=np.zeros(d),
        cls_w=w((f, c), f),
        cls_b=np.zeros(c),
    )


def _pad1(x):
    h, width, cin = x.shape
    padded = np.zeros((h + 2, width + 2, cin))
    padded[1:-1, 1:-1] = x
    return padded


def _conv3x3(x, w, padded=None):
    """Same-resolution 3x3 correlation with zero padding 1.

    x: (H, W, Cin), w: (3, 3, Cin, Cout) -> (H, W, Cout).  Computed as one
    matmul per kernel row on contiguous row blocks of the padded input
    (no im2col gather), then three shifted column accumulations.
    """
    h, width, cin = x.shape
    cout = w.shape[3]
    if padded is None:
        padded = _pad1(x)
    out = np.zeros((h, width, cout))
    for dy in range(3):
        w_row = w[dy].transpose(1, 0, 2).reshape(cin, 3 * cout)
        block = padded[dy : dy + h].reshape(h * (width + 2), cin)
        p = (block @ w_row).reshape(h, width + 2, 3, cout)
        for dx in range(3):
            out += p[:, dx : dx + width, dx]
    return out, padded


def _conv3x3_backward(x, w, d_out, padded=None):
    """Gradients of the 3x3 correlation wrt kernel and input."""
    h, width, cin = x.shape
    cout = w.shape[3]
    if padded is None:
        padded = _pad1(x)
    # scattered copy of d_out with one column block per dx offset
    d_shift = np.zeros((h, width + 2, 3, cout))
    for dx in range(3):
        d_shift[:, dx : dx + width, dx] = d_out
    d_shift = d_shift.reshape(h * (width + 2), 3 * cout)

    d_w = np.empty_like(w)
    d_padded = np.zeros_like(padded)
    for dy in range(3):
        block = padded[dy : dy + h].reshape(h * (width + 2), cin)
        d_w[dy] = (block.T @ d_shift).reshape(cin, 3, cout).transpose(1, 0, 2)
        w_row = w[dy].transpose(1, 0, 2).reshape(cin, 3 * cout)
        d_padded[dy : dy + h] += (d_shift @ w_row.T).reshape(h, width + 2, cin)
    return d_w, d_padded[1:-1, 1:-1]


def forward(params, image, return_cache=False):
    """Run the network on one (H, W, 3) image in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {image.shape}")
    if params.conv1_w.shape[2] != 3:
        raise ValueError("parameter/input channel mismatch")
    assert_finite(image, "input image")

    a1, pad1 = _conv3x3(image, params.conv1_w)
    a1 += params.conv1_b
    h1 = np.maximum(a1, 0.0)
    a2, pad2 = _conv3x3(h1, params.conv2_w)
    a2 += params.conv2_b
    feat = np.maximum(a2, 0.0)

    logits = feat @ params.seg_w + params.seg_b
    r1pre = feat @ params.rep1_w + params.rep1_b
    r1 = np.maximum(r1pre, 0.0)
    rep = r1 @ params.rep2_w + params.rep2_b
    pooled = feat.mean(axis=(0, 1))
    cls_logits = pooled @ params.cls_w + params.cls_b

    outputs = ModelOutputs(
        logits=logits,
        prob=softmax(logits, axis=-1),
        repr=rep,
        cls_logits=cls_logits,
        feat=feat,
    )
    if not return_cache:
        return outputs
    cache = {"a1": a1, "h1": h1, "a2": a2, "feat": feat, "r1pre": r1pre,
             "r1": r1, "pooled": pooled, "pad1": pad1, "pad2": pad2}
    return outputs, cache


def backward(params, image, d_logits=None, d_repr=None, d_cls=None, cache=None):
    """Exact parameter gradients for given upstream output gradients.

    Any of the upstream gradients may be None (treated as zero).  Returns a
    ModelParams-shaped gradient container.
    """
    image = np.asarray(image, dtype=np.float64)
    if cache is None:
        _, cache = forward(params, image, return_cache=True)
    h, w = image.shape[:2]
    f, c, d = params.sizes
    feat = cache["feat"]
    feat2d = feat.reshape(-1, f)

    for g, name in ((d_logits, "d_logits"), (d_repr, "d_repr"), (d_cls, "d_cls")):
        if g is not None:
            assert_finite(np.asarray(g), name)

    grads = params.zeros_like()
    d_feat = np.zeros_like(feat)

    if d_logits is not None:
        gl = d_logits.reshape(-1, c)
        grads.seg_w += feat2d.T @ gl
        grads.seg_b += gl.sum(axis=0)
        d_feat += (gl @ params.seg_w.T).reshape(feat.shape)

    if d_repr is not None:
        gr = d_repr.reshape(-1, d)
        r1_2d = cache["r1"].reshape(-1, f // 2)
        grads.rep2_w += r1_2d.T @ gr
        grads.rep2_b += gr.sum(axis=0)
        d_r1 = gr @ params.rep2_w.T
        d_r1pre = d_r1 * (cache["r1pre"].reshape(-1, f // 2) > 0.0)
        grads.rep1_w += feat2d.T @ d_r1pre
        grads.rep1_b += d_r1pre.sum(axis=0)
        d_feat += (d_r1pre @ params.rep1_w.T).reshape(feat.shape)

    if d_cls is not None:
        grads.cls_w += np.outer(cache["pooled"], d_cls)
        grads.cls_b += d_cls
        d_feat += (params.cls_w @ d_cls) / (h * w)

    d_a2 = d_feat * (cache["a2"] > 0.0)
    d_w2, d_h1 = _conv3x3_backward(cache["h1"], params.conv2_w, d_a2, padded=cache.get("pad2"))
    grads.conv2_w += d_w2
    grads.conv2_b += d_a2.sum(axis=(0, 1))

    d_a1 = d_h1 * (cache["a1"] > 0.0)
    d_w1, _ = _conv3x3_backward(image, params.conv1_w, d_a1, padded=cache.get("pad1"))
    grads.conv1_w += d_w1
    grads.conv1_b += d_a1.sum(axis=(0, 1))
    return grads


def ema_update(teacher, student, m):
    """theta_t <- m * theta_t + (1 - m) * theta_s, element-wise."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {m}")
    updated = {}
    for (name, t_arr), (_, s_arr) in zip(teacher.named(), student.named()):
        if t_arr.shape != s_arr.shape:
            raise ValueError(f"shape mismatch for {name}")
        updated[name] = m * t_arr + (1.0 - m) * s_arr
    return ModelParams(**updated)


def params_to_tensors(params, prefix):
    """Flatten parameters into checkpoint names like '<prefix>.conv1.w'."""
    out = {}
    for name, arr in params.named():
        stem, kind = name.rsplit("_", 1)
        out[f"{prefix}.{stem}.{kind}"] = arr
    return out


def params_from_tensors(tensors, prefix):
    kwargs = {}
    for name in ModelParams.FIELDS:
        stem, kind = name.rsplit("_", 1)
        key = f"{prefix}.{stem}.{kind}"
        if key not in tensors:
            raise ValueError(f"checkpoint is missing tensor {key}")
        kwargs[name] = tensors[key].astype(np.float64)
    return ModelParams(**kwargs)


def save_params(path, params, prefix="student"):
    tensorio.save_checkpoint(path, params_to_tensors(params, prefix))


def load_params(path, prefix="student"):
    return params_from_tensors(tensorio.load_checkpoint(path), prefix)


def encode_json_tensor(obj):
    """JSON payload as a uint8 tensor, for stashing state in checkpoints."""
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()


def decode_json_tensor(arr):
    return json.loads(arr.tobytes().decode("utf-8"))
