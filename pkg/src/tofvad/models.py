"""The five autoencoder architectures.

Every model maps a (1, L, H, W) input tensor (L input frames stacked along
the channel axis; L=1 for reconstruction models, 4 for prediction models)
to a single predicted/reconstructed frame of shape (1, 1, H, W).

Shared conventions: 5x5 kernels, stride 1 with same-padding, spatial
reduction only via 2x2 max-pooling, nearest-neighbour upsampling, ReLU
between layers, sigmoid on the output layer (targets live in [0,1]).
Odd spatial sizes floor-pool on the way down; the decoder zero-pads each
upsampled map back to the recorded pre-pool size so output shape always
equals input shape.
"""

from __future__ import annotations

import enum
import hashlib
import json

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .frameio import InputMode

KERNEL = 5
PAD = KERNEL // 2


class ModelKind(enum.Enum):
    RCAE = "rcae"
    PCAE = "pcae"
    PCONVLSTM = "pconvlstm"
    RVITAE = "rvitae"
    PVITAE = "pvitae"

    @classmethod
    def coerce(cls, value: "ModelKind | str") -> "ModelKind":
        return value if isinstance(value, cls) else cls(str(value).lower())


class Model:
    """Base: an ordered parameter registry plus a forward contract."""

    kind: ModelKind
    input_mode: InputMode
    clip_len: int
    # whether forward accepts (B, clip_len, H, W) for any B >= 1; recurrent
    # and token-based architectures bake batch size 1 into their state shapes
    batch_flexible: bool = False

    def __init__(self, height: int, width: int, dtype=np.float32, seed: int = 0):
        self.height = int(height)
        self.width = int(width)
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)

    # -- parameter registry ------------------------------------------------

    def _add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.ascontiguousarray(array, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def _conv_weight(self, name: str, f: int, c: int) -> Tensor:
        w = nn.kaiming_uniform(self._rng, (f, c, KERNEL, KERNEL),
                               fan_in=c * KERNEL * KERNEL, dtype=self.dtype)
        return self._add(name, w)

    def _tconv_weight(self, name: str, cin: int, cout: int) -> Tensor:
        w = nn.kaiming_uniform(self._rng, (cin, cout, KERNEL, KERNEL),
                               fan_in=cin * KERNEL * KERNEL, dtype=self.dtype)
        return self._add(name, w)

    def _linear_weight(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        w = nn.kaiming_uniform(self._rng, (fan_in, fan_out), fan_in=fan_in,
                               dtype=self.dtype)
        return self._add(name, w)

    def _zeros(self, name: str, shape) -> Tensor:
        return self._add(name, np.zeros(shape, dtype=self.dtype))

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self._params.values())

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter names do not match architecture "
                             f"(missing: {sorted(missing)}, unexpected: {sorted(extra)})")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.data.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} does not "
                                 f"match architecture {t.data.shape}")
            t.data = np.ascontiguousarray(arr, dtype=self.dtype)

    def arch_digest(self) -> str:
        """Fingerprint of the architecture (not the values); guards against
        loading a checkpoint into a mismatched model."""
        desc = {
            "kind": self.kind.value,
            "height": self.height,
            "width": self.width,
            "params": [(n, list(t.shape)) for n, t in self._params.items()],
        }
        blob = json.dumps(desc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # -- forward -------------------------------------------------------------

    def _check_input(self, x: Tensor) -> None:
        want = (1, self.clip_len, self.height, self.width)
        if self.batch_flexible:
            if (x.data.ndim == 4 and x.shape[0] >= 1
                    and x.shape[1:] == want[1:]):
                return
            raise ValueError(f"{self.kind.value} expects input shape "
                             f"(B, {self.clip_len}, {self.height}, "
                             f"{self.width}), got {x.shape}")
        if x.shape != want:
            raise ValueError(f"{self.kind.value} expects input shape {want}, "
                             f"got {x.shape}")

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def _restore(x: Tensor, h: int, w: int) -> Tensor:
    """Zero-pad bottom/right after upsampling so odd pre-pool sizes round-trip."""
    _, _, ch, cw = x.shape
    if (ch, cw) == (h, w):
        return x
    return ag.pad2d(x, 0, h - ch, 0, w - cw)


class _ConvAE(Model):
    """Shared forward for the two plain convolutional autoencoders."""

    batch_flexible = True               # the conv/pool stack is batch-agnostic
    encoder_channels: tuple[int, ...]   # e.g. (1, 32, 16, 8)
    decoder_channels: tuple[int, ...]   # tconv chain, last entry = output of chain
    final_conv: bool                    # R-CAE ends in a conv layer, P-CAE ends
                                        # in its last tconv (upsampled after)

    def _build(self):
        enc = self.encoder_channels
        for i in range(len(enc) - 1):
            self._conv_weight(f"enc{i}.w", enc[i + 1], enc[i])
            self._zeros(f"enc{i}.b", enc[i + 1])
        dec = self.decoder_channels
        for i in range(len(dec) - 1):
            self._tconv_weight(f"dec{i}.w", dec[i], dec[i + 1])
            self._zeros(f"dec{i}.b", dec[i + 1])
        if self.final_conv:
            self._conv_weight("head.w", 1, dec[-1])
            self._zeros("head.b", 1)

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        p = self._params
        sizes: list[tuple[int, int]] = []
        n_enc = len(self.encoder_channels) - 1
        for i in range(n_enc):
            x = ag.relu(nn.conv2d(x, p[f"enc{i}.w"], p[f"enc{i}.b"], padding=PAD))
            sizes.append((x.shape[2], x.shape[3]))
            x = nn.maxpool2(x)
        n_dec = len(self.decoder_channels) - 1
        for i in range(n_dec):
            last = (i == n_dec - 1) and not self.final_conv
            x = nn.conv_transpose2d(x, p[f"dec{i}.w"], p[f"dec{i}.b"], padding=PAD)
            if not last:
                x = ag.relu(x)
            x = _restore(nn.upsample2(x), *sizes[-(i + 1)])
        if self.final_conv:
            x = nn.conv2d(x, p["head.w"], p["head.b"], padding=PAD)
        return ag.sigmoid(x)


class RCAE(_ConvAE):
    """Reconstruction AE: 3 conv+pool encoder, 3 tconv+up decoder, conv head."""

    kind = ModelKind.RCAE
    input_mode = InputMode.RECONSTRUCTION
    clip_len = 1
    encoder_channels = (1, 32, 16, 8)
    decoder_channels = (8, 16, 32, 64)
    final_conv = True

    def __init__(self, height: int, width: int, dtype=np.float32, seed: int = 0):
        if height < 8 or width < 8:
            raise ValueError(f"rcae needs at least 8x8 input, got {width}x{height}")
        super().__init__(height, width, dtype, seed)
        self._build()


class PCAE(_ConvAE):
    """Prediction AE over 4 stacked frames: 5 conv+pool, 5 tconv+up."""

    kind = ModelKind.PCAE
    input_mode = InputMode.PREDICTION
    clip_len = 4
    encoder_channels = (4, 64, 32, 16, 8, 4)
    decoder_channels = (4, 8, 16, 32, 64, 1)
    final_conv = False

    def __init__(self, height: int, width: int, dtype=np.float32, seed: int = 0):
        if height < 32 or width < 32:
            raise ValueError(f"pcae needs at least 32x32 input, got {width}x{height}")
        super().__init__(height, width, dtype, seed)
        self._build()


# --------------------------------------------------------------------------
# ConvLSTM


def conv_lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
                   wx: Tensor, wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One ConvLSTM step. Gate stack order along channels: input, forget,
    candidate, output; each gate holds `hidden` channels."""
    hidden = h_prev.shape[1]
    gates = ag.add(nn.conv2d(x, wx, b, padding=PAD),
                   nn.conv2d(h_prev, wh, None, padding=PAD))
    i = ag.sigmoid(ag.narrow(gates, 1, 0, hidden))
    f = ag.sigmoid(ag.narrow(gates, 1, hidden, hidden))
    g = ag.tanh(ag.narrow(gates, 1, 2 * hidden, hidden))
    o = ag.sigmoid(ag.narrow(gates, 1, 3 * hidden, hidden))
    c = ag.add(ag.mul(f, c_prev), ag.mul(i, g))
    h = ag.mul(o, ag.tanh(c))
    return h, c


class PConvLSTM(Model):
    """6 stacked ConvLSTM cells (hidden 8) unrolled over the 4 input frames;
    a 5x5 conv maps the last cell's final hidden state to the frame."""

    kind = ModelKind.PCONVLSTM
    input_mode = InputMode.PREDICTION
    clip_len = 4
    n_cells = 6
    hidden = 8

    def __init__(self, height: int, width: int, dtype=np.float32, seed: int = 0):
        super().__init__(height, width, dtype, seed)
        hd = self.hidden
        for i in range(self.n_cells):
            cin = 1 if i == 0 else hd
            self._conv_weight(f"cell{i}.wx", 4 * hd, cin)
            self._conv_weight(f"cell{i}.wh", 4 * hd, hd)
            b = np.zeros(4 * hd, dtype=self.dtype)
            b[hd:2 * hd] = 1.0  # forget-gate bias starts open
            self._add(f"cell{i}.b", b)
        self._conv_weight("head.w", 1, hd)
        self._zeros("head.b", 1)

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        p = self._params
        hd = self.hidden
        shape = (1, hd, self.height, self.width)
        hs = [ag.Tensor(np.zeros(shape, dtype=self.dtype)) for _ in range(self.n_cells)]
        cs = [ag.Tensor(np.zeros(shape, dtype=self.dtype)) for _ in range(self.n_cells)]
        for t in range(self.clip_len):
            inp = ag.narrow(x, 1, t, 1)
            for i in range(self.n_cells):
                hs[i], cs[i] = conv_lstm_cell(inp, hs[i], cs[i],
                                              p[f"cell{i}.wx"], p[f"cell{i}.wh"],
                                              p[f"cell{i}.b"])
                inp = hs[i]
        out = nn.conv2d(hs[-1], p["head.w"], p["head.b"], padding=PAD)
        return ag.sigmoid(out)


# --------------------------------------------------------------------------
# Vision transformers


class _ViTAE(Model):
    """Patchify -> linear embed + positions -> pre-LN transformer blocks ->
    linear head back to pixel values -> reassemble."""

    patch = 16
    embed_dim = 8
    depth = 4
    heads = 2
    mlp_hidden = 32

    def __init__(self, height: int, width: int, dtype=np.float32, seed: int = 0):
        super().__init__(height, width, dtype, seed)
        ph = -(-height // self.patch)   # grid size after padding up
        pw = -(-width // self.patch)
        self.grid = (ph, pw)
        self.padded = (ph * self.patch, pw * self.patch)
        self.tokens = ph * pw
        d = self.embed_dim
        in_features = self.clip_len * self.patch * self.patch
        self._linear_weight("embed.w", in_features, d)
        self._zeros("embed.b", d)
        self._add("pos", self._rng.normal(0.0, 0.02, (self.tokens, d)).astype(self.dtype))
        for i in range(self.depth):
            self._add(f"blk{i}.ln1.g", np.ones(d, dtype=self.dtype))
            self._zeros(f"blk{i}.ln1.b", d)
            for nm in ("wq", "wk", "wv", "wo"):
                self._linear_weight(f"blk{i}.att.{nm}", d, d)
            for nm in ("bq", "bk", "bv", "bo"):
                self._zeros(f"blk{i}.att.{nm}", d)
            self._add(f"blk{i}.ln2.g", np.ones(d, dtype=self.dtype))
            self._zeros(f"blk{i}.ln2.b", d)
            self._linear_weight(f"blk{i}.mlp.w1", d, self.mlp_hidden)
            self._zeros(f"blk{i}.mlp.b1", self.mlp_hidden)
            self._linear_weight(f"blk{i}.mlp.w2", self.mlp_hidden, d)
            self._zeros(f"blk{i}.mlp.b2", d)
        self._add("ln_out.g", np.ones(d, dtype=self.dtype))
        self._zeros("ln_out.b", d)
        self._linear_weight("head.w", d, self.patch * self.patch)
        self._zeros("head.b", self.patch * self.patch)

    def _patchify(self, x: Tensor) -> Tensor:
        gh, gw = self.grid
        ph, pw = self.padded
        c = self.clip_len
        x = ag.pad2d(x, 0, ph - self.height, 0, pw - self.width)
        x = ag.reshape(x, (c, gh, self.patch, gw, self.patch))
        x = ag.transpose(x, (1, 3, 0, 2, 4))
        return ag.reshape(x, (self.tokens, c * self.patch * self.patch))

    def _reassemble(self, tokens: Tensor) -> Tensor:
        gh, gw = self.grid
        x = ag.reshape(tokens, (gh, gw, self.patch, self.patch))
        x = ag.transpose(x, (0, 2, 1, 3))
        x = ag.reshape(x, (1, 1, gh * self.patch, gw * self.patch))
        return ag.crop2d(x, self.height, self.width)

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        p = self._params
        tok = ag.add(nn.linear(self._patchify(x), p["embed.w"], p["embed.b"]),
                     p["pos"])
        for i in range(self.depth):
            normed = ag.layer_norm(tok, p[f"blk{i}.ln1.g"], p[f"blk{i}.ln1.b"])
            att = nn.multi_head_attention(
                normed, normed, normed, self.heads,
                nn.AttentionParams(p[f"blk{i}.att.wq"], p[f"blk{i}.att.wk"],
                                   p[f"blk{i}.att.wv"], p[f"blk{i}.att.wo"],
                                   p[f"blk{i}.att.bq"], p[f"blk{i}.att.bk"],
                                   p[f"blk{i}.att.bv"], p[f"blk{i}.att.bo"]))
            tok = ag.add(tok, att)
            normed = ag.layer_norm(tok, p[f"blk{i}.ln2.g"], p[f"blk{i}.ln2.b"])
            ff = nn.linear(ag.relu(nn.linear(normed, p[f"blk{i}.mlp.w1"],
                                             p[f"blk{i}.mlp.b1"])),
                           p[f"blk{i}.mlp.w2"], p[f"blk{i}.mlp.b2"])
            tok = ag.add(tok, ff)
        tok = ag.layer_norm(tok, p["ln_out.g"], p["ln_out.b"])
        pixels = nn.linear(tok, p["head.w"], p["head.b"])
        return ag.sigmoid(self._reassemble(pixels))


class RViTAE(_ViTAE):
    kind = ModelKind.RVITAE
    input_mode = InputMode.RECONSTRUCTION
    clip_len = 1


class PViTAE(_ViTAE):
    kind = ModelKind.PVITAE
    input_mode = InputMode.PREDICTION
    clip_len = 4


_BUILDERS = {
    ModelKind.RCAE: RCAE,
    ModelKind.PCAE: PCAE,
    ModelKind.PCONVLSTM: PConvLSTM,
    ModelKind.RVITAE: RViTAE,
    ModelKind.PVITAE: PViTAE,
}


def build_model(kind: ModelKind | str, height: int, width: int,
                dtype=np.float32, seed: int = 0) -> Model:
    return _BUILDERS[ModelKind.coerce(kind)](height, width, dtype=dtype, seed=seed)


def clip_to_input(frames: list[np.ndarray], dtype=np.float32) -> Tensor:
    """Stack L (H, W) frames into the (1, L, H, W) network input layout."""
    return Tensor(np.ascontiguousarray(np.stack(frames)[None, ...], dtype=dtype))
