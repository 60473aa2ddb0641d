"""Networks, losses, and the optimizer, with explicit numpy backpropagation.

Everything here is batch-first float numpy. Each network keeps its
parameters in a flat ``name -> ndarray`` dict so one Adam instance can step
any mix of them; backward passes return gradient dicts with matching keys.

The point-cloud backbone deliberately has no batch normalization. The
deployed inference format stores a folded per-channel affine after each
linear map, so the trainer learns that affine directly: training statistics
then match inference exactly, and per-cloud features stay independent of
batch composition (which the pose loss requires, since it compares features
across clouds inside a batch).
"""

from __future__ import annotations

import numpy as np

from .quant_sim import QuantPair

FEATURE_DIM = 1024
STATE_DIM = 2 * FEATURE_DIM
BACKBONE_WIDTHS = (64, 128, FEATURE_DIM)
ACTOR_WIDTHS = (512, 256)
ACTION_AXES = 3
ACTION_LABELS = 13


class Adam:
    """Adam with per-name state over parameter dicts (beta1=0.9, beta2=0.999)."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> None:
        for name, grad in grads.items():
            param = params[name]
            if name not in self._m:
                self._m[name] = np.zeros_like(param, dtype=np.float64)
                self._v[name] = np.zeros_like(param, dtype=np.float64)
                self._t[name] = 0
            g = np.asarray(grad, dtype=np.float64)
            self._t[name] += 1
            t = self._t[name]
            m = self._m[name] = self.beta1 * self._m[name] + (1 - self.beta1) * g
            v = self._v[name] = self.beta2 * self._v[name] + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            update = lr * m_hat / (np.sqrt(v_hat) + self.eps)
            params[name] = (param.astype(np.float64) - update).astype(param.dtype)


def he_init(rng: np.random.Generator, fan_out: int, fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal((fan_out, fan_in)) * std).astype(dtype)


def _relu_backward(dout: np.ndarray, pre: np.ndarray) -> np.ndarray:
    return np.where(pre > 0, dout, 0).astype(dout.dtype, copy=False)


class Backbone:
    """Point feature extractor: three linear+affine+ReLU stages, max-pooled.

    Shapes: (B, N, 3) clouds in, (B, 1024) features out. The second and
    third linear maps optionally run through fake quantizers (``quant2``,
    ``quant3``) that simulate the deployed integer pipeline.
    """

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.dtype = dtype
        d0, (d1, d2, d3) = 3, BACKBONE_WIDTHS
        self.params: dict[str, np.ndarray] = {
            "w1": he_init(rng, d1, d0, dtype),
            "scale1": np.ones(d1, dtype=dtype),
            "shift1": np.zeros(d1, dtype=dtype),
            "w2": he_init(rng, d2, d1, dtype),
            "scale2": np.ones(d2, dtype=dtype),
            "shift2": np.zeros(d2, dtype=dtype),
            "w3": he_init(rng, d3, d2, dtype),
            "scale3": np.ones(d3, dtype=dtype),
            "shift3": np.zeros(d3, dtype=dtype),
        }
        self.quant2: QuantPair | None = None
        self.quant3: QuantPair | None = None
        self.freeze_affine = False

    # -- forward / backward ------------------------------------------------

    def forward(self, clouds: np.ndarray):
        p = self.params
        b, n, _ = clouds.shape
        x = np.ascontiguousarray(clouds.reshape(b * n, 3), dtype=self.dtype)

        h1 = x @ p["w1"].T
        a1 = p["scale1"] * h1 + p["shift1"]
        r1 = np.maximum(a1, 0)

        if self.quant2 is not None:
            x2, ctx_a2 = self.quant2.act.forward(r1)
            w2h, ctx_w2 = self.quant2.wgt.forward(p["w2"])
        else:
            x2, ctx_a2, w2h, ctx_w2 = r1, None, p["w2"], None
        h2 = x2 @ w2h.T
        a2 = p["scale2"] * h2 + p["shift2"]
        r2 = np.maximum(a2, 0)

        if self.quant3 is not None:
            x3, ctx_a3 = self.quant3.act.forward(r2)
            w3h, ctx_w3 = self.quant3.wgt.forward(p["w3"])
        else:
            x3, ctx_a3, w3h, ctx_w3 = r2, None, p["w3"], None
        h3 = x3 @ w3h.T
        a3 = p["scale3"] * h3 + p["shift3"]
        r3 = np.maximum(a3, 0).reshape(b, n, FEATURE_DIM)

        arg = np.argmax(r3, axis=1)
        feats = np.take_along_axis(r3, arg[:, None, :], axis=1)[:, 0, :]
        cache = (x, h1, a1, x2, ctx_a2, w2h, ctx_w2, h2, a2,
                 x3, ctx_a3, w3h, ctx_w3, h3, a3, arg, (b, n))
        return feats, cache

    def backward(self, dfeats: np.ndarray, cache):
        (x, h1, a1, x2, ctx_a2, w2h, ctx_w2, h2, a2,
         x3, ctx_a3, w3h, ctx_w3, h3, a3, arg, (b, n)) = cache
        p = self.params
        grads: dict[str, np.ndarray] = {}

        dr3 = np.zeros((b, n, FEATURE_DIM), dtype=dfeats.dtype)
        np.put_along_axis(dr3, arg[:, None, :], dfeats[:, None, :], axis=1)
        da3 = _relu_backward(dr3.reshape(b * n, FEATURE_DIM), a3)
        if not self.freeze_affine:
            grads["scale3"] = np.einsum("ij,ij->j", da3, h3)
            grads["shift3"] = da3.sum(axis=0)
        dh3 = da3 * p["scale3"]
        dw3h = dh3.T @ x3
        dx3 = dh3 @ w3h
        if self.quant3 is not None:
            dr2, grads["q3.act"] = self.quant3.act.backward(dx3, ctx_a3)
            grads["w3"], grads["q3.wgt"] = self.quant3.wgt.backward(dw3h, ctx_w3)
        else:
            dr2, grads["w3"] = dx3, dw3h

        da2 = _relu_backward(dr2, a2)
        if not self.freeze_affine:
            grads["scale2"] = np.einsum("ij,ij->j", da2, h2)
            grads["shift2"] = da2.sum(axis=0)
        dh2 = da2 * p["scale2"]
        dw2h = dh2.T @ x2
        dx2 = dh2 @ w2h
        if self.quant2 is not None:
            dr1, grads["q2.act"] = self.quant2.act.backward(dx2, ctx_a2)
            grads["w2"], grads["q2.wgt"] = self.quant2.wgt.backward(dw2h, ctx_w2)
        else:
            dr1, grads["w2"] = dx2, dw2h

        da1 = _relu_backward(dr1, a1)
        if not self.freeze_affine:
            grads["scale1"] = np.einsum("ij,ij->j", da1, h1)
            grads["shift1"] = da1.sum(axis=0)
        dh1 = da1 * p["scale1"]
        grads["w1"] = dh1.T @ x
        return grads

    # -- inference helpers ---------------------------------------------------

    def features(self, clouds: np.ndarray, chunk: int = 64) -> np.ndarray:
        """Gradient-free features for (B, N, 3), chunked over clouds."""
        outs = []
        for start in range(0, clouds.shape[0], chunk):
            feats, _ = self.forward(clouds[start:start + chunk])
            outs.append(feats)
        return np.concatenate(outs, axis=0)

    def stage_activations(self, clouds: np.ndarray, chunk: int = 64):
        """Max |input| seen by each quantized product (for scale calibration).

        Returns (max r1, max r2) over a calibration set, computed with the
        current quantizers (normally None, i.e. the float network).
        """
        max1 = 0.0
        max2 = 0.0
        p = self.params
        for start in range(0, clouds.shape[0], chunk):
            part = clouds[start:start + chunk]
            b, n, _ = part.shape
            x = part.reshape(b * n, 3).astype(self.dtype)
            r1 = np.maximum(p["scale1"] * (x @ p["w1"].T) + p["shift1"], 0)
            r2 = np.maximum(p["scale2"] * (r1 @ p["w2"].T) + p["shift2"], 0)
            max1 = max(max1, float(r1.max(initial=0.0)))
            max2 = max(max2, float(r2.max(initial=0.0)))
        return max1, max2

    def table_params(self) -> dict[str, np.ndarray]:
        """Learnable table entries keyed like the gradient dict."""
        out: dict[str, np.ndarray] = {}
        if self.quant2 is not None:
            out["q2.act"] = self.quant2.act.entries
            out["q2.wgt"] = self.quant2.wgt.entries
        if self.quant3 is not None:
            out["q3.act"] = self.quant3.act.entries
            out["q3.wgt"] = self.quant3.wgt.entries
        return out

    def set_table_params(self, params: dict[str, np.ndarray]) -> None:
        if self.quant2 is not None:
            self.quant2.act.entries = params["q2.act"]
            self.quant2.wgt.entries = params["q2.wgt"]
        if self.quant3 is not None:
            self.quant3.act.entries = params["q3.act"]
            self.quant3.wgt.entries = params["q3.wgt"]

    def project_tables(self) -> None:
        for pair in (self.quant2, self.quant3):
            if pair is not None:
                pair.project()


class MlpHead:
    """Auxiliary head over global features: linear+affine+ReLU twice, linear.

    ``tanh_out=True`` squashes the final layer (the decoder variant);
    otherwise raw scores come out (the classifier variant).
    """

    def __init__(self, rng: np.random.Generator, out_dim: int, tanh_out: bool,
                 dtype=np.float32):
        self.dtype = dtype
        self.tanh_out = tanh_out
        dims = (FEATURE_DIM, 512, 256, out_dim)
        self.params = {
            "w1": he_init(rng, dims[1], dims[0], dtype),
            "scale1": np.ones(dims[1], dtype=dtype),
            "shift1": np.zeros(dims[1], dtype=dtype),
            "w2": he_init(rng, dims[2], dims[1], dtype),
            "scale2": np.ones(dims[2], dtype=dtype),
            "shift2": np.zeros(dims[2], dtype=dtype),
            "w3": he_init(rng, dims[3], dims[2], dtype),
            "b3": np.zeros(dims[3], dtype=dtype),
        }

    def forward(self, feats: np.ndarray):
        p = self.params
        h1 = feats @ p["w1"].T
        a1 = p["scale1"] * h1 + p["shift1"]
        r1 = np.maximum(a1, 0)
        h2 = r1 @ p["w2"].T
        a2 = p["scale2"] * h2 + p["shift2"]
        r2 = np.maximum(a2, 0)
        out = r2 @ p["w3"].T + p["b3"]
        if self.tanh_out:
            out = np.tanh(out)
        return out, (feats, h1, a1, r1, h2, a2, r2, out)

    def backward(self, dout: np.ndarray, cache):
        feats, h1, a1, r1, h2, a2, r2, out = cache
        p = self.params
        if self.tanh_out:
            dout = dout * (1 - out * out)
        grads = {"w3": dout.T @ r2, "b3": dout.sum(axis=0)}
        dr2 = dout @ p["w3"]
        da2 = _relu_backward(dr2, a2)
        grads["scale2"] = np.einsum("ij,ij->j", da2, h2)
        grads["shift2"] = da2.sum(axis=0)
        dh2 = da2 * p["scale2"]
        grads["w2"] = dh2.T @ r1
        dr1 = dh2 @ p["w2"]
        da1 = _relu_backward(dr1, a1)
        grads["scale1"] = np.einsum("ij,ij->j", da1, h1)
        grads["shift1"] = da1.sum(axis=0)
        dh1 = da1 * p["scale1"]
        grads["w1"] = dh1.T @ feats
        dfeats = dh1 @ p["w1"]
        return grads, dfeats


class Actor:
    """Discrete-action policy head: 2048 -> 512 -> 256 -> 3x13 logits.

    The first two linear layers carry biases and optional fake quantizers;
    the final logits layer always runs in float.
    """

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.dtype = dtype
        d1, d2 = ACTOR_WIDTHS
        out = ACTION_AXES * ACTION_LABELS
        self.params = {
            "w1": he_init(rng, d1, STATE_DIM, dtype),
            "b1": np.zeros(d1, dtype=dtype),
            "w2": he_init(rng, d2, d1, dtype),
            "b2": np.zeros(d2, dtype=dtype),
            "w3": he_init(rng, out, d2, dtype),
            "b3": np.zeros(out, dtype=dtype),
        }
        self.quant1: QuantPair | None = None
        self.quant2: QuantPair | None = None

    def forward(self, states: np.ndarray):
        p = self.params
        x = states.astype(self.dtype, copy=False)
        if self.quant1 is not None:
            x1, ctx_a1 = self.quant1.act.forward(x)
            w1h, ctx_w1 = self.quant1.wgt.forward(p["w1"])
        else:
            x1, ctx_a1, w1h, ctx_w1 = x, None, p["w1"], None
        a1 = x1 @ w1h.T + p["b1"]
        r1 = np.maximum(a1, 0)
        if self.quant2 is not None:
            x2, ctx_a2 = self.quant2.act.forward(r1)
            w2h, ctx_w2 = self.quant2.wgt.forward(p["w2"])
        else:
            x2, ctx_a2, w2h, ctx_w2 = r1, None, p["w2"], None
        a2 = x2 @ w2h.T + p["b2"]
        r2 = np.maximum(a2, 0)
        logits = (r2 @ p["w3"].T + p["b3"]).reshape(-1, ACTION_AXES, ACTION_LABELS)
        cache = (x1, ctx_a1, w1h, ctx_w1, a1, x2, ctx_a2, w2h, ctx_w2, a2, r2)
        return logits, cache

    def backward(self, dlogits: np.ndarray, cache):
        x1, ctx_a1, w1h, ctx_w1, a1, x2, ctx_a2, w2h, ctx_w2, a2, r2 = cache
        p = self.params
        dout = dlogits.reshape(-1, ACTION_AXES * ACTION_LABELS)
        grads = {"w3": dout.T @ r2, "b3": dout.sum(axis=0)}
        dr2 = dout @ p["w3"]
        da2 = _relu_backward(dr2, a2)
        grads["b2"] = da2.sum(axis=0)
        dw2h = da2.T @ x2
        dx2 = da2 @ w2h
        if self.quant2 is not None:
            dr1, grads["q2.act"] = self.quant2.act.backward(dx2, ctx_a2)
            grads["w2"], grads["q2.wgt"] = self.quant2.wgt.backward(dw2h, ctx_w2)
        else:
            dr1, grads["w2"] = dx2, dw2h
        da1 = _relu_backward(dr1, a1)
        grads["b1"] = da1.sum(axis=0)
        dw1h = da1.T @ x1
        if self.quant1 is not None:
            _, grads["q1.act"] = self.quant1.act.backward(da1 @ w1h, ctx_a1)
            grads["w1"], grads["q1.wgt"] = self.quant1.wgt.backward(dw1h, ctx_w1)
        else:
            grads["w1"] = dw1h
        return grads

    def hidden_max(self, states: np.ndarray, chunk: int = 2048) -> float:
        """Max first-hidden activation over a state set (float weights),
        i.e. the input range the second quantized product must cover."""
        p = self.params
        peak = 0.0
        for start in range(0, states.shape[0], chunk):
            x = states[start:start + chunk].astype(self.dtype, copy=False)
            r1 = np.maximum(x @ p["w1"].T + p["b1"], 0)
            peak = max(peak, float(r1.max(initial=0.0)))
        return peak

    def table_params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.quant1 is not None:
            out["q1.act"] = self.quant1.act.entries
            out["q1.wgt"] = self.quant1.wgt.entries
        if self.quant2 is not None:
            out["q2.act"] = self.quant2.act.entries
            out["q2.wgt"] = self.quant2.wgt.entries
        return out

    def set_table_params(self, params: dict[str, np.ndarray]) -> None:
        if self.quant1 is not None:
            self.quant1.act.entries = params["q1.act"]
            self.quant1.wgt.entries = params["q1.wgt"]
        if self.quant2 is not None:
            self.quant2.act.entries = params["q2.act"]
            self.quant2.wgt.entries = params["q2.wgt"]

    def project_tables(self) -> None:
        for pair in (self.quant1, self.quant2):
            if pair is not None:
                pair.project()


# -- losses -----------------------------------------------------------------


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy over the leading axes; returns (loss, dlogits).

    ``logits`` has classes on the last axis; ``labels`` matches the leading
    shape. The gradient already includes the 1/rows mean factor.
    """
    flat = logits.reshape(-1, logits.shape[-1]).astype(np.float64)
    lab = labels.reshape(-1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    prob = exp / exp.sum(axis=1, keepdims=True)
    rows = np.arange(flat.shape[0])
    loss = float(-np.log(np.maximum(prob[rows, lab], 1e-300)).mean())
    dflat = prob
    dflat[rows, lab] -= 1.0
    dflat /= flat.shape[0]
    return loss, dflat.reshape(logits.shape).astype(logits.dtype)


def chamfer_with_grad(decoded: np.ndarray, targets: np.ndarray):
    """Symmetric chamfer distance, batch-meaned; returns (loss, ddecoded).

    decoded: (B, M, 3) predictions, targets: (B, N, 3) reference clouds.
    Both nearest-neighbour directions contribute squared distances.
    """
    b, m, _ = decoded.shape
    n = targets.shape[1]
    total = 0.0
    grad = np.zeros_like(decoded, dtype=np.float64)
    dec64 = decoded.astype(np.float64)
    tgt64 = targets.astype(np.float64)
    for i in range(b):
        diff = dec64[i][:, None, :] - tgt64[i][None, :, :]
        d2 = np.einsum("mnk,mnk->mn", diff, diff)
        j_star = d2.argmin(axis=1)
        i_star = d2.argmin(axis=0)
        fwd = d2[np.arange(m), j_star]
        bwd = d2[i_star, np.arange(n)]
        total += fwd.mean() + bwd.mean()
        grad[i] += (2.0 / m) * (dec64[i] - tgt64[i][j_star])
        np.add.at(grad[i], i_star,
                  (2.0 / n) * (dec64[i][i_star] - tgt64[i]))
    loss = total / b
    return float(loss), (grad / b).astype(decoded.dtype)
