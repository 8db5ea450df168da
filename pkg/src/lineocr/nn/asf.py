"""Attention-weighted fusion of same-resolution multi-scale feature maps."""
from __future__ import annotations

import numpy as np

from .layers import Layer, Tensor, he_uniform


class ASFBlock(Layer):
    """Fuse ``S`` feature maps ``[N, C, H, W]`` into one.

    The inputs are concatenated on channels, a 1x1 convolution produces one
    logit per scale and pixel, a softmax across scales turns the logits into
    weights, and the output is the weighted sum of the inputs.  Because the
    weights sum to one, identical inputs come back unchanged.
    """

    kind = "asf"

    def __init__(self, name, scales, channels, rng):
        super().__init__(name)
        self.scales, self.channels = scales, channels
        fan_in = scales * channels
        self.params["W"] = Tensor(he_uniform(rng, fan_in, (fan_in, scales)))
        self.params["b"] = Tensor(np.zeros(scales))

    def forward(self, features):
        if len(features) != self.scales:
            raise ValueError(f"expected {self.scales} feature maps, got {len(features)}")
        shapes = {np.shape(f) for f in features}
        if len(shapes) != 1:
            raise ValueError(f"feature maps must share one shape, got {sorted(shapes)}")
        x = np.stack([np.asarray(f, dtype=np.float64) for f in features])  # [S, N, C, H, W]
        if x.shape[2] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[2]}")
        S, N, C, H, W = x.shape
        cat = x.transpose(1, 3, 4, 0, 2).reshape(N, H, W, S * C)
        logits = cat @ self.params["W"].data + self.params["b"].data  # [N, H, W, S]
        z = logits - logits.max(axis=-1, keepdims=True)
        w = np.exp(z)
        w /= w.sum(axis=-1, keepdims=True)
        wt = w.transpose(3, 0, 1, 2)[:, :, None]  # [S, N, 1, H, W]
        out = (wt * x).sum(axis=0)
        self._cache = (x, cat, w)
        return out

    def backward(self, dout):
        """Return the list of input gradients; parameter grads accumulate."""
        x, cat, w = self._need_cache()
        S, N, C, H, W = x.shape
        dout = np.asarray(dout, dtype=np.float64)
        wt = w.transpose(3, 0, 1, 2)[:, :, None]
        dx = wt * dout[None]
        dw = (x * dout[None]).sum(axis=2).transpose(1, 2, 3, 0)  # [N, H, W, S]
        dlogits = w * (dw - (dw * w).sum(axis=-1, keepdims=True))
        if not self.frozen:
            self._grad("W", cat.reshape(-1, S * C).T @ dlogits.reshape(-1, S))
            self._grad("b", dlogits.reshape(-1, S).sum(axis=0))
        dcat = dlogits @ self.params["W"].data.T  # [N, H, W, S*C]
        dx = dx + dcat.reshape(N, H, W, S, C).transpose(3, 0, 4, 1, 2)
        return [dx[s] for s in range(S)]


def asf_fuse(block: ASFBlock, features):
    return block.forward(features)
