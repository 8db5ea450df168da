"""The recognizer: conv stack, sequence fold, BiLSTMs, per-frame log-softmax."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import BatchNorm, BiLSTM, Conv2D, Dense, LogSoftmax, MaxPool2D

MIN_SIZE = 8
CONV_BLOCK = ("conv1", "bn1", "conv2", "bn2", "conv3", "bn3")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    units: int = 0
    activation: str = ""
    note: str = ""

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "units": self.units,
                "activation": self.activation, "note": self.note}


def table_layers(num_classes, width_div=1):
    """Layer descriptors in recognizer order.  ``width_div`` shrinks every width."""
    d = width_div
    return [
        LayerSpec("conv1", "conv", 32 // d, "relu", "3x3"),
        LayerSpec("pool1", "maxpool", 0, "", "2x2"),
        LayerSpec("bn1", "batchnorm"),
        LayerSpec("conv2", "conv", 64 // d, "relu", "3x3"),
        LayerSpec("pool2", "maxpool", 0, "", "2x2"),
        LayerSpec("bn2", "batchnorm"),
        LayerSpec("conv3", "conv", 128 // d, "relu", "3x3"),
        LayerSpec("bn3", "batchnorm"),
        LayerSpec("dense1", "dense", 64 // d, "relu"),
        LayerSpec("bn4", "batchnorm"),
        LayerSpec("bilstm1", "bilstm", 128 // d, "", "return sequences"),
        LayerSpec("bilstm2", "bilstm", 256 // d, "", "return sequences"),
        LayerSpec("out", "dense", num_classes, "softmax", "vocabulary + blank"),
    ]


@dataclass
class ModelSpec:
    """Architecture descriptor.  ``num_classes`` counts the blank."""

    num_classes: int
    height: int = 32
    width_div: int = 1
    layers: list = field(default=None)

    def __post_init__(self):
        if self.width_div not in (1, 2, 4, 8):
            raise ValueError("width_div must be one of 1, 2, 4, 8")
        if self.height < MIN_SIZE or self.height % 4:
            raise ValueError(f"height must be a multiple of 4 and >= {MIN_SIZE}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2 (at least one symbol plus blank)")
        if self.layers is None:
            self.layers = table_layers(self.num_classes, self.width_div)

    def units(self, name):
        for spec in self.layers:
            if spec.name == name:
                return spec.units
        raise KeyError(name)

    def to_dict(self):
        return {"num_classes": self.num_classes, "height": self.height,
                "width_div": self.width_div, "layers": [s.to_dict() for s in self.layers]}

    @classmethod
    def from_dict(cls, d):
        spec = cls(d["num_classes"], d["height"], d["width_div"])
        if [s.to_dict() for s in spec.layers] != d["layers"]:
            raise ValueError("layer descriptors do not match the recognizer architecture")
        return spec


class CRNN:
    """CNN-BiLSTM recognizer emitting per-frame log probabilities.

    Images are ink-high, ``[N, 1, H, W]``.  Batches of different-width lines
    are padded on the left (the end of a right-to-left line); ``widths``
    gives each sample's valid width.  Outputs for frame ``t >= lengths[n]``
    are meaningless and must be ignored.
    """

    def __init__(self, spec: ModelSpec, seed=0):
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        u = spec.units
        c1, c2, c3 = u("conv1"), u("conv2"), u("conv3")
        feat = c3 * (spec.height // 4)
        self.layers = {
            "conv1": Conv2D("conv1", 1, c1, rng),
            "pool1": MaxPool2D("pool1"),
            "bn1": BatchNorm("bn1", c1),
            "conv2": Conv2D("conv2", c1, c2, rng),
            "pool2": MaxPool2D("pool2"),
            "bn2": BatchNorm("bn2", c2),
            "conv3": Conv2D("conv3", c2, c3, rng),
            "bn3": BatchNorm("bn3", c3),
            "dense1": Dense("dense1", feat, u("dense1"), rng, relu=True),
            "bn4": BatchNorm("bn4", u("dense1")),
            "bilstm1": BiLSTM("bilstm1", u("dense1"), u("bilstm1"), rng),
            "bilstm2": BiLSTM("bilstm2", 2 * u("bilstm1"), u("bilstm2"), rng),
            "out": Dense("out", 2 * u("bilstm2"), spec.num_classes, rng),
            "logsoftmax": LogSoftmax("logsoftmax"),
        }
        self._masks = None

    # -- parameters -------------------------------------------------------
    def named_params(self):
        for lname, layer in self.layers.items():
            for pname, t in layer.params.items():
                yield f"{lname}.{pname}", t

    def trainable_params(self):
        for lname, layer in self.layers.items():
            if layer.frozen:
                continue
            for pname, t in layer.params.items():
                yield f"{lname}.{pname}", t

    def zero_grad(self):
        for _, t in self.named_params():
            t.zero_grad()

    def train(self, mode=True):
        for layer in self.layers.values():
            layer.training = mode
        return self

    def eval(self):
        return self.train(False)

    @property
    def frozen(self):
        return sorted(n for n, layer in self.layers.items() if layer.frozen and layer.params)

    def freeze(self, names):
        self._set_frozen(names, True)

    def unfreeze(self, names):
        self._set_frozen(names, False)

    def _set_frozen(self, names, value):
        valid = sorted(n for n, layer in self.layers.items() if layer.params)
        unknown = [n for n in names if n not in valid]
        if unknown:
            raise KeyError(f"unknown layer(s) {unknown}; valid names: {valid}")
        for n in names:
            self.layers[n].frozen = value

    # -- forward / backward ----------------------------------------------
    def forward(self, batch, widths=None):
        """Return ``(log_probs [N, T, C], lengths [N])``."""
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected [N, 1, H, W] input, got shape {x.shape}")
        N, _, H, W = x.shape
        if H < MIN_SIZE or W < MIN_SIZE:
            raise ValueError(f"input {H}x{W} too small: height and width must be >= {MIN_SIZE}")
        if H != self.spec.height:
            raise ValueError(f"model expects height {self.spec.height}, got {H}")
        if H % 4 or W % 4:
            raise ValueError(f"input {H}x{W}: height and width must be multiples of 4")
        if widths is None:
            widths = np.full(N, W)
        widths = np.asarray(widths)
        if np.any(widths % 4) or np.any(widths > W) or np.any(widths < 4):
            raise ValueError("widths must be multiples of 4 within the batch width")
        lengths = widths // 4
        padded = bool(np.any(widths < W))
        L = self.layers

        def col_mask(w_total):
            scale = W // w_total
            m = (np.arange(w_total)[None, :] >= (W - widths[:, None]) // scale).astype(np.float64)
            return m[:, None, :, None]

        m1 = col_mask(W // 2) if padded else None
        m2 = col_mask(W // 4) if padded else None

        def masked(v, m):
            return v if m is None else v * m

        h = x.transpose(0, 2, 3, 1)
        h = L["pool1"].forward(L["conv1"].forward(h))
        h = masked(L["bn1"].forward(h, m1), m1)
        h = L["pool2"].forward(L["conv2"].forward(h))
        h = masked(L["bn2"].forward(h, m2), m2)
        h = masked(L["bn3"].forward(L["conv3"].forward(h), m2), m2)
        # fold: time = columns reversed (reading order), features = H/4 * C
        n, h4, w4, c = h.shape
        seq = h.transpose(0, 2, 1, 3).reshape(n, w4, h4 * c)[:, ::-1]
        tm = None
        if padded:
            tm = (np.arange(w4)[None, :] < lengths[:, None]).astype(np.float64)[..., None]
        s = L["dense1"].forward(seq)
        s = masked(L["bn4"].forward(s, tm), tm)
        s = masked(L["bilstm1"].forward(s, tm), tm)
        s = masked(L["bilstm2"].forward(s, tm), tm)
        out = L["logsoftmax"].forward(L["out"].forward(s))
        self._masks = (m1, m2, tm, (n, h4, w4, c))
        return out, lengths

    def backward(self, dlogp):
        """Backpropagate ``d loss / d log_probs``; fills parameter gradients."""
        if self._masks is None:
            raise RuntimeError("backward called without a preceding forward")
        m1, m2, tm, (n, h4, w4, c) = self._masks
        L = self.layers

        def masked(v, m):
            return v if m is None else v * m

        g = L["out"].backward(L["logsoftmax"].backward(np.asarray(dlogp, dtype=np.float64)))
        g = L["bilstm2"].backward(masked(g, tm))
        g = L["bilstm1"].backward(masked(g, tm))
        g = L["bn4"].backward(masked(g, tm))
        g = L["dense1"].backward(g)
        g = g[:, ::-1].reshape(n, w4, h4, c).transpose(0, 2, 1, 3)
        if L["conv1"].frozen and L["conv2"].frozen and L["conv3"].frozen and \
                L["bn1"].frozen and L["bn2"].frozen and L["bn3"].frozen:
            return None
        g = L["conv3"].backward(L["bn3"].backward(masked(g, m2)))
        g = L["conv2"].backward(L["pool2"].backward(L["bn2"].backward(masked(g, m2))))
        g = L["conv1"].backward(L["pool1"].backward(L["bn1"].backward(masked(g, m1))))
        return g.transpose(0, 3, 1, 2)

    # -- persistent state -------------------------------------------------
    def buffers(self):
        for lname, layer in self.layers.items():
            for k, v in layer.state().items():
                yield f"{lname}.{k}", v

    def load_buffers(self, buffers):
        grouped = {}
        for key, v in buffers.items():
            lname, k = key.split(".", 1)
            grouped.setdefault(lname, {})[k] = v
        for lname, st in grouped.items():
            self.layers[lname].load_state(st)
