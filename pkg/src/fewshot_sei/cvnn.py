"""Complex-valued 1-D CNN: embedding network and classifier head.

Complex arrays are carried as (real, imag) pairs of real tensors. For
speed the network runs on a "stacked" layout where the channel axis
holds the real block followed by the imaginary block; a complex
convolution or linear map is then a single real operation with a
kernel assembled as [[Wr, -Wi], [Wi, Wr]].
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, ndgrad
from .errors import (
    InvalidStride,
    MalformedHeader,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedVersion,
)
from .ndgrad import Tensor

CHECKPOINT_MAGIC = b"CVCK"
CHECKPOINT_VERSION = 1


@dataclass
class ComplexTensor:
    """A pair of equally shaped real tensors holding I (real) and Q (imag)."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.data.shape != self.imag.data.shape:
            raise ShapeMismatch(
                f"real {self.real.data.shape} and imag {self.imag.data.shape} differ"
            )

    @property
    def shape(self):
        return self.real.data.shape


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; parameter shapes follow from it."""

    num_classes: int
    input_len: int = 1024
    conv_layers: tuple = ((8, 7, 2), (16, 5, 2))
    pooled_len: int = 32
    embed_dim: int = 64

    def __post_init__(self):
        object.__setattr__(
            self, "conv_layers", tuple(tuple(int(v) for v in layer) for layer in self.conv_layers)
        )
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.embed_dim < 2:
            raise ValueError(f"embed_dim must be >= 2, got {self.embed_dim}")
        if self.input_len < 1:
            raise ValueError(f"input_len must be positive, got {self.input_len}")
        length = self.input_len
        for i, (cout, ksz, stride) in enumerate(self.conv_layers):
            if cout < 1 or ksz < 1 or stride < 1:
                raise ValueError(f"conv layer {i} has non-positive entries")
            if ksz > length:
                raise ValueError(
                    f"conv layer {i} kernel {ksz} exceeds its input length {length}"
                )
            length = (length - ksz) // stride + 1
        if length < self.pooled_len:
            raise ValueError(
                f"pooled_len {self.pooled_len} exceeds final conv length {length}"
            )

    @property
    def conv_out_len(self) -> int:
        length = self.input_len
        for _, ksz, stride in self.conv_layers:
            length = (length - ksz) // stride + 1
        return length

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "input_len": self.input_len,
            "conv_layers": [list(layer) for layer in self.conv_layers],
            "pooled_len": self.pooled_len,
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            num_classes=int(d["num_classes"]),
            input_len=int(d["input_len"]),
            conv_layers=tuple(tuple(layer) for layer in d["conv_layers"]),
            pooled_len=int(d["pooled_len"]),
            embed_dim=int(d["embed_dim"]),
        )


# -- layer operations -----------------------------------------------------------
#
# A complex map with components (Wr, Wi) acting on stacked [re; im] blocks is
# one real map with the block kernel [[Wr, -Wi], [Wi, Wr]]; the fused ops
# below assemble that kernel outside the graph and split its gradient back
# into the two free components.

_grad_accum = ndgrad._accum


def _stacked_conv(x: Tensor, wr: Tensor, wi: Tensor, stride: int) -> Tensor:
    """Complex conv on a stacked (N, 2*Cin, L) tensor -> (N, 2*Cout, Lp)."""
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise InvalidStride(f"stride must be a positive integer, got {stride!r}")
    if wr.data.shape != wi.data.shape:
        raise ShapeMismatch(f"kernel halves differ: {wr.data.shape} vs {wi.data.shape}")
    cout, cin, ksz = wr.data.shape
    n, xc, length = x.data.shape
    if xc != 2 * cin:
        raise ShapeMismatch(f"stacked input has {xc} channels, kernels expect {2 * cin}")
    if ksz > length:
        raise ShapeMismatch(f"kernel size {ksz} exceeds input length {length}")
    lp = (length - ksz) // stride + 1

    wfull = np.concatenate(
        [
            np.concatenate([wr.data, -wi.data], axis=1),
            np.concatenate([wi.data, wr.data], axis=1),
        ],
        axis=0,
    )
    wmat = wfull.reshape(2 * cout, 2 * cin * ksz)
    col = _kernels.im2col(x.data, ksz, stride)
    out = (col @ wmat.T).reshape(n, lp, 2 * cout).transpose(0, 2, 1)

    def _bwd(g):
        gor = _kernels.ncl_to_rows(g)
        if wr.requires_grad or wi.requires_grad:
            gw = (gor.T @ col).reshape(2 * cout, 2 * cin, ksz)
            if wr.requires_grad:
                _grad_accum(wr, gw[:cout, :cin] + gw[cout:, cin:])
            if wi.requires_grad:
                _grad_accum(wi, gw[cout:, :cin] - gw[:cout, cin:])
        if x.requires_grad:
            _grad_accum(
                x, _kernels.col2im(gor @ wmat, n, 2 * cin, length, ksz, stride)
            )

    return ndgrad._make(out, (x, wr, wi), _bwd)


def _stacked_linear(
    x: Tensor, wr: Tensor, wi: Tensor, br: Tensor, bi: Tensor
) -> Tensor:
    """Complex affine map on stacked (N, 2*Din) rows -> (N, 2*Dout)."""
    din, dout = wr.data.shape
    wfull = np.empty((2 * din, 2 * dout))
    wfull[:din, :dout] = wr.data
    wfull[:din, dout:] = wi.data
    wfull[din:, :dout] = -wi.data
    wfull[din:, dout:] = wr.data
    bfull = np.concatenate([br.data, bi.data])
    if x.data.shape[1] != 2 * din:
        raise ShapeMismatch(f"stacked input {x.data.shape} vs weights {wr.data.shape}")
    out = x.data @ wfull + bfull

    def _bwd(g):
        if wr.requires_grad or wi.requires_grad:
            gw = x.data.T @ g
            if wr.requires_grad:
                _grad_accum(wr, gw[:din, :dout] + gw[din:, dout:])
            if wi.requires_grad:
                _grad_accum(wi, gw[:din, dout:] - gw[din:, :dout])
        if br.requires_grad:
            _grad_accum(br, g[:, :dout].sum(axis=0))
        if bi.requires_grad:
            _grad_accum(bi, g[:, dout:].sum(axis=0))
        if x.requires_grad:
            _grad_accum(x, g @ wfull.T)

    return ndgrad._make(out, (x, wr, wi, br, bi), _bwd)


def _embed_fused(x: Tensor, model: "CvcnnModel") -> Tensor:
    """Whole embedding stack as one graph node with a hand-written adjoint.

    Semantically identical to CvcnnModel.embed_stacked_ops (conv+relu per
    layer, remainder-absorbing mean pool, complex linear, modulus) but with
    layer activations kept in a flat rows layout so the backward pass runs
    in a handful of GEMMs and kernel sweeps.
    """
    cfg = model.config
    n = x.data.shape[0]
    dim = cfg.embed_dim

    a_view = x.data  # (N, C2, length) with C2 = stacked channel count
    length = cfg.input_len
    cin2 = x.data.shape[1]
    cols, acts, wmats, geoms = [], [], [], []
    for wr, wi, br, bi, (cout, ksz, stride) in zip(
        model.conv_wr, model.conv_wi, model.conv_br, model.conv_bi, cfg.conv_layers
    ):
        wfull = np.concatenate(
            [
                np.concatenate([wr.data, -wi.data], axis=1),
                np.concatenate([wi.data, wr.data], axis=1),
            ],
            axis=0,
        )
        wmat = wfull.reshape(2 * cout, cin2 * ksz)
        col = _kernels.im2col(a_view, ksz, stride)
        lp = (length - ksz) // stride + 1
        bias_row = np.concatenate([br.data, bi.data])
        act = np.maximum(col @ wmat.T + bias_row, 0.0)  # (N*lp, 2*cout) rows layout
        cols.append(col)
        acts.append(act)
        wmats.append(wmat)
        geoms.append((cin2, length, ksz, stride, lp))
        a_view = act.reshape(n, lp, 2 * cout).transpose(0, 2, 1)
        cin2, length = 2 * cout, lp

    bins = cfg.pooled_len
    q = length // bins
    head = (bins - 1) * q
    last_w = length - head
    edges = q * np.arange(bins)
    widths = np.full(bins, float(q))
    widths[-1] = float(last_w)
    last_nlc = acts[-1].reshape(n, length, cin2)
    pooled = np.add.reduceat(last_nlc, edges, axis=1) / widths[None, :, None]
    flat = np.ascontiguousarray(pooled.transpose(0, 2, 1)).reshape(n, cin2 * bins)

    din = model.fc_wr.data.shape[0]
    wfc = np.empty((2 * din, 2 * dim))
    wfc[:din, :dim] = model.fc_wr.data
    wfc[:din, dim:] = model.fc_wi.data
    wfc[din:, :dim] = -model.fc_wi.data
    wfc[din:, dim:] = model.fc_wr.data
    z = flat @ wfc + np.concatenate([model.fc_br.data, model.fc_bi.data])
    re, im = z[:, :dim], z[:, dim:]
    mod = np.sqrt(re * re + im * im)

    def _bwd(g):
        scale = np.where(mod > 0.0, g / np.where(mod > 0.0, mod, 1.0), 0.0)
        gz = np.empty_like(z)
        gz[:, :dim] = scale * re
        gz[:, dim:] = scale * im
        gwfc = flat.T @ gz
        _grad_accum(model.fc_wr, gwfc[:din, :dim] + gwfc[din:, dim:])
        _grad_accum(model.fc_wi, gwfc[:din, dim:] - gwfc[din:, :dim])
        _grad_accum(model.fc_br, gz[:, :dim].sum(axis=0))
        _grad_accum(model.fc_bi, gz[:, dim:].sum(axis=0))

        gpooled_t = (gz @ wfc.T).reshape(n, cin2, bins)
        gpooled = gpooled_t.transpose(0, 2, 1)  # (N, bins, C2)
        glast = np.empty((n, length, cin2))
        glast[:, :head].reshape(n, bins - 1, q, cin2)[:] = (
            gpooled[:, : bins - 1] / q
        )[:, :, None, :]
        glast[:, head:] = (gpooled[:, bins - 1] / last_w)[:, None, :]
        grows = glast.reshape(n * length, cin2)

        for i in range(len(cols) - 1, -1, -1):
            wr, wi = model.conv_wr[i], model.conv_wi[i]
            cin2_i, len_i, ksz, stride, lp = geoms[i]
            cout2 = wmats[i].shape[0]
            _kernels.mask_nonpositive(grows, acts[i])
            gw = (grows.T @ cols[i]).reshape(cout2, cin2_i, ksz)
            half_o, half_c = cout2 // 2, cin2_i // 2
            _grad_accum(wr, gw[:half_o, :half_c] + gw[half_o:, half_c:])
            _grad_accum(wi, gw[half_o:, :half_c] - gw[:half_o, half_c:])
            gb = grows.sum(axis=0)
            _grad_accum(model.conv_br[i], gb[:half_o])
            _grad_accum(model.conv_bi[i], gb[half_o:])
            if i > 0:
                gcol = grows @ wmats[i]
                grows = _kernels.col2im_rows(gcol, n, cin2_i, len_i, ksz, stride)
            elif x.requires_grad:
                gcol = grows @ wmats[i]
                _grad_accum(x, _kernels.col2im(gcol, n, cin2_i, len_i, ksz, stride))

    parents = (
        x,
        *model.conv_wr,
        *model.conv_wi,
        *model.conv_br,
        *model.conv_bi,
        model.fc_wr,
        model.fc_wi,
        model.fc_br,
        model.fc_bi,
    )
    return ndgrad._make(mod, parents, _bwd)


def complex_conv1d(x: ComplexTensor, wr: Tensor, wi: Tensor, stride: int) -> ComplexTensor:
    """Complex-arithmetic convolution:

    real = conv(xr, Wr) - conv(xi, Wi); imag = conv(xi, Wr) + conv(xr, Wi).
    """
    squeeze = x.real.data.ndim == 2
    if squeeze:
        n_ch, length = x.real.data.shape
        xr = ndgrad.reshape(x.real, (1, n_ch, length))
        xi = ndgrad.reshape(x.imag, (1, n_ch, length))
    else:
        xr, xi = x.real, x.imag
    stacked = ndgrad.concat([xr, xi], axis=1)
    out = _stacked_conv(stacked, wr, wi, stride)
    cout = wr.data.shape[0]
    real = ndgrad.narrow(out, 1, 0, cout)
    imag = ndgrad.narrow(out, 1, cout, cout)
    if squeeze:
        real = ndgrad.reshape(real, real.data.shape[1:])
        imag = ndgrad.reshape(imag, imag.data.shape[1:])
    return ComplexTensor(real=real, imag=imag)


def crelu(x: ComplexTensor) -> ComplexTensor:
    """ReLU applied independently to the real and imaginary parts."""
    return ComplexTensor(real=ndgrad.relu(x.real), imag=ndgrad.relu(x.imag))


def avg_pool_to(x: ComplexTensor, pooled_len: int) -> ComplexTensor:
    """Per-component mean pooling of the last axis into pooled_len bins."""
    return ComplexTensor(
        real=ndgrad.avg_pool_to(x.real, pooled_len),
        imag=ndgrad.avg_pool_to(x.imag, pooled_len),
    )


# -- model ------------------------------------------------------------------------


CONV_BIAS_INIT = 0.1  # positive margin keeps rectified units initially active


@dataclass
class CvcnnModel:
    """Complex conv stack + modulus readout + real softmax classifier."""

    config: ModelConfig
    conv_wr: list = field(default_factory=list)
    conv_wi: list = field(default_factory=list)
    conv_br: list = field(default_factory=list)
    conv_bi: list = field(default_factory=list)
    fc_wr: Tensor = None
    fc_wi: Tensor = None
    fc_br: Tensor = None
    fc_bi: Tensor = None
    head_w: Tensor = None
    head_b: Tensor = None

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "CvcnnModel":
        """Random parameters with fan-in scaled normals; draw order is fixed.

        Conv biases start at a small positive value: with bias-free kernels
        the rectified units of deeper layers die en masse within the first
        Adam steps on all-positive normalized inputs, which freezes training.
        """

        def normal(shape, fan_in):
            return Tensor(rng.standard_normal(shape) / np.sqrt(fan_in), requires_grad=True)

        conv_wr, conv_wi, conv_br, conv_bi = [], [], [], []
        cin = 1
        for cout, ksz, _ in config.conv_layers:
            fan = 2 * cin * ksz
            conv_wr.append(normal((cout, cin, ksz), fan))
            conv_wi.append(normal((cout, cin, ksz), fan))
            conv_br.append(Tensor(np.full(cout, CONV_BIAS_INIT), requires_grad=True))
            conv_bi.append(Tensor(np.full(cout, CONV_BIAS_INIT), requires_grad=True))
            cin = cout
        flat_dim = cin * config.pooled_len
        fc_wr = normal((flat_dim, config.embed_dim), 2 * flat_dim)
        fc_wi = normal((flat_dim, config.embed_dim), 2 * flat_dim)
        fc_br = Tensor(np.zeros(config.embed_dim), requires_grad=True)
        fc_bi = Tensor(np.zeros(config.embed_dim), requires_grad=True)
        # zero-init head: until it grows, no gradient reaches the embedding,
        # so the first steps cannot push the conv stack into dead-relu collapse
        head_w = Tensor(np.zeros((config.embed_dim, config.num_classes)), requires_grad=True)
        head_b = Tensor(np.zeros(config.num_classes), requires_grad=True)
        return cls(
            config=config,
            conv_wr=conv_wr,
            conv_wi=conv_wi,
            conv_br=conv_br,
            conv_bi=conv_bi,
            fc_wr=fc_wr,
            fc_wi=fc_wi,
            fc_br=fc_br,
            fc_bi=fc_bi,
            head_w=head_w,
            head_b=head_b,
        )

    def named_parameters(self):
        items = []
        for i in range(len(self.conv_wr)):
            items.append((f"conv{i}.wr", self.conv_wr[i]))
            items.append((f"conv{i}.wi", self.conv_wi[i]))
            items.append((f"conv{i}.br", self.conv_br[i]))
            items.append((f"conv{i}.bi", self.conv_bi[i]))
        items += [
            ("fc.wr", self.fc_wr),
            ("fc.wi", self.fc_wi),
            ("fc.br", self.fc_br),
            ("fc.bi", self.fc_bi),
            ("head.w", self.head_w),
            ("head.b", self.head_b),
        ]
        return items

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    # -- forward passes ---------------------------------------------------------

    def embed_stacked(self, stacked: Tensor) -> Tensor:
        """Features for a stacked batch (N, 2, L): real channel then imag.

        Layout note: conv activations keep [real block | imag block] along
        the channel axis, so flattening (N, 2C, P) yields exactly the
        [re_flat | im_flat] row layout the stacked linear map expects.
        """
        if stacked.data.ndim != 3 or stacked.data.shape[1:] != (2, self.config.input_len):
            raise ShapeMismatch(
                f"expected (N, 2, {self.config.input_len}) input, got {stacked.data.shape}"
            )
        return _embed_fused(stacked, self)

    def embed_stacked_ops(self, stacked: Tensor) -> Tensor:
        """Reference embed built from the composable layer ops.

        Kept as the cross-check twin of the fused forward/backward used by
        embed_stacked; both must agree exactly.
        """
        n = stacked.data.shape[0]
        x = stacked
        for wr, wi, br, bi, (cout, _, stride) in zip(
            self.conv_wr, self.conv_wi, self.conv_br, self.conv_bi, self.config.conv_layers
        ):
            y = _stacked_conv(x, wr, wi, stride)
            bias = ndgrad.reshape(ndgrad.concat([br, bi], axis=0), (1, 2 * cout, 1))
            x = ndgrad.relu(y + bias)
        x = ndgrad.avg_pool_to(x, self.config.pooled_len)
        flat = ndgrad.reshape(x, (n, x.data.shape[1] * x.data.shape[2]))
        z = _stacked_linear(flat, self.fc_wr, self.fc_wi, self.fc_br, self.fc_bi)
        d = self.config.embed_dim
        re = ndgrad.narrow(z, 1, 0, d)
        im = ndgrad.narrow(z, 1, d, d)
        return ndgrad.safe_sqrt(re * re + im * im)

    def classify_feats(self, feats: Tensor) -> Tensor:
        """Class probabilities for a feature batch (N, embed_dim)."""
        if feats.data.shape[1] != self.config.embed_dim:
            raise ShapeMismatch(
                f"feature dim {feats.data.shape[1]} != embed_dim {self.config.embed_dim}"
            )
        return ndgrad.softmax(ndgrad.linear(feats, self.head_w, self.head_b))


def embed(model: CvcnnModel, x: ComplexTensor) -> Tensor:
    """Semantic feature of one record (1 complex channel x input_len)."""
    if x.real.data.shape != (1, model.config.input_len):
        raise ShapeMismatch(
            f"expected (1, {model.config.input_len}) input, got {x.real.data.shape}"
        )
    stacked = ndgrad.reshape(
        ndgrad.concat([x.real, x.imag], axis=0), (1, 2, model.config.input_len)
    )
    return ndgrad.reshape(model.embed_stacked(stacked), (model.config.embed_dim,))


def classify(model: CvcnnModel, feature: Tensor) -> Tensor:
    """Class probabilities for a single embed() feature vector."""
    if feature.data.shape != (model.config.embed_dim,):
        raise ShapeMismatch(
            f"expected ({model.config.embed_dim},) feature, got {feature.data.shape}"
        )
    probs = model.classify_feats(ndgrad.reshape(feature, (1, model.config.embed_dim)))
    return ndgrad.reshape(probs, (model.config.num_classes,))


# -- checkpoint I/O ----------------------------------------------------------------


def save_checkpoint(model: CvcnnModel, path):
    """Versioned binary dump of config + parameters; round-trips bit-exactly."""
    cfg_bytes = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    items = model.named_parameters()
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<H", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(cfg_bytes))
    blob += cfg_bytes
    blob += struct.pack("<H", len(items))
    for name, tensor in items:
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb))
        blob += nb
        arr = tensor.data
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.astype("<f8", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedPayload(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> CvcnnModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 6 or buf[:4] != CHECKPOINT_MAGIC:
        raise MalformedHeader("not a model checkpoint (bad magic)")
    rd = _Reader(buf)
    rd.take(4)
    version = rd.u16()
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    cfg_len = rd.u32()
    try:
        cfg = ModelConfig.from_dict(json.loads(rd.take(cfg_len).decode("utf-8")))
    except (ValueError, KeyError) as exc:
        raise MalformedHeader(f"bad checkpoint config: {exc}") from exc
    count = rd.u16()
    arrays = {}
    for _ in range(count):
        name = rd.take(rd.u16()).decode("utf-8")
        ndim = rd.u8()
        shape = tuple(rd.u32() for _ in range(ndim))
        n_elem = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(rd.take(8 * n_elem), dtype="<f8").reshape(shape)
        arrays[name] = np.ascontiguousarray(data.astype(np.float64))

    model = CvcnnModel.init(cfg, np.random.default_rng(0))
    for name, tensor in model.named_parameters():
        if name not in arrays:
            raise MalformedHeader(f"checkpoint missing parameter {name}")
        if arrays[name].shape != tensor.data.shape:
            raise MalformedHeader(
                f"parameter {name}: shape {arrays[name].shape} != expected {tensor.data.shape}"
            )
        tensor.data = arrays[name]
    return model
