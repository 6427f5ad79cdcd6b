"""GRU-GeoFNO network: parameters, forward pass and manual backward pass.

Data flow for a normalised window ``x`` [B, L, N, C]::

    concat x_coord -> linear encoder (C+1 -> hidden)
    -> GRU along L, independently per (batch, section), final state kept
    -> FNO block(s): GELU(spectral_conv(v) + v W + b) along N
    -> linear decoder (hidden -> 2)

The decoder emits the normalised next-hour (H, Q) directly. With
``residual=True`` it is instead added to the last (H, Q) of the window, so
the network predicts the normalised one-hour change. Closed-loop rollouts
of that variant accumulate per-step errors, so it is off by default.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .features import mode_count
from .nn.layers import (
    gelu_backward,
    gelu_forward,
    gru_recurrent_backward,
    gru_recurrent_forward,
    linear_backward,
    linear_forward,
    spectral_conv1d_backward,
    spectral_conv1d_forward,
)

__all__ = ["ModelConfig", "init_params", "forward", "backward", "param_shapes"]


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 96
    max_modes: int = 48
    seq_len: int = 12
    in_channels: int = 8
    out_channels: int = 2
    n_blocks: int = 1
    residual: bool = False

    def __post_init__(self):
        if self.hidden <= 0 or self.max_modes <= 0 or self.seq_len < 1 or self.n_blocks < 1:
            raise ValueError(f"invalid model configuration {self}")
        if self.out_channels != 2:
            raise ValueError("the decoder always emits (H, Q)")

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(config: ModelConfig, n_xs: int) -> dict[str, tuple[int, ...]]:
    H = config.hidden
    K = mode_count(n_xs, config.max_modes)
    shapes = {
        "enc_W": (config.in_channels + 1, H),
        "enc_b": (H,),
        "gru_Wx": (H, 3 * H),
        "gru_Uh": (H, 3 * H),
        "gru_b": (3 * H,),
    }
    for k in range(config.n_blocks):
        shapes[f"fno{k}_w_re"] = (K, H, H)
        shapes[f"fno{k}_w_im"] = (K, H, H)
        shapes[f"fno{k}_skip_W"] = (H, H)
        shapes[f"fno{k}_skip_b"] = (H,)
    shapes["dec_W"] = (H, config.out_channels)
    shapes["dec_b"] = (config.out_channels,)
    return shapes


def init_params(config: ModelConfig, n_xs: int, rng: np.random.Generator, dtype=np.float64):
    """Uniform(+-1/sqrt(fan_in)) dense weights; spectral weights N(0, 1)/hidden."""
    params = {}
    for name, shape in param_shapes(config, n_xs).items():
        if "_w_re" in name or "_w_im" in name:
            arr = rng.standard_normal(shape) / config.hidden
        else:
            fan_in = config.in_channels + 1 if name.startswith("enc") else config.hidden
            bound = 1.0 / np.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, shape)
        params[name] = arr.astype(dtype)
    return params


def _n_blocks(params) -> int:
    return sum(1 for k in params if k.endswith("_skip_W"))


def forward(params, window, x_coord, residual: bool = False):
    """Normalised window [B, L, N, C] -> normalised (H, Q) prediction [B, N, 2]."""
    dtype = params["enc_W"].dtype
    x = np.asarray(window, dtype=dtype)
    if x.ndim != 4:
        raise ValueError(f"window must be [B, L, N, C], got shape {x.shape}")
    B, L, N, C = x.shape
    if N < 3:
        raise ValueError("a reach needs at least 3 cross-sections")
    if C + 1 != params["enc_W"].shape[0]:
        raise ValueError(f"encoder expects {params['enc_W'].shape[0] - 1} channels, window has {C}")
    coord = np.asarray(x_coord, dtype=dtype)
    if coord.shape != (N,):
        raise ValueError(f"x_coord must have shape ({N},), got {coord.shape}")
    H = params["enc_W"].shape[1]

    xin = np.concatenate([x, np.broadcast_to(coord[None, None, :, None], (B, L, N, 1))], axis=-1)
    # rows ordered (b, n), time-major
    xin = np.ascontiguousarray(xin.transpose(1, 0, 2, 3)).reshape(L * B * N, C + 1)
    # the encoder is linear and feeds the GRU input projection directly, so
    # both maps are applied as one (C+1) x 3H product
    Wx = params["gru_Wx"]
    W_in = params["enc_W"] @ Wx
    b_in = params["enc_b"] @ Wx + params["gru_b"]
    xw = (xin @ W_in + b_in).reshape(L, B * N, 3 * H)
    h_last, gru_cache = gru_recurrent_forward(xw, params["gru_Uh"])
    v = h_last.reshape(B, N, H)
    cache = {"shape": (B, L, N, C, H), "xin": xin, "gru": gru_cache, "gru_out": v, "blocks": []}
    for k in range(_n_blocks(params)):
        s, s_cache = spectral_conv1d_forward(v, params[f"fno{k}_w_re"], params[f"fno{k}_w_im"])
        lin, lin_cache = linear_forward(v, params[f"fno{k}_skip_W"], params[f"fno{k}_skip_b"])
        v, g_cache = gelu_forward(s + lin)
        cache["blocks"].append((s_cache, lin_cache, g_cache))
    out, dec_cache = linear_forward(v, params["dec_W"], params["dec_b"])
    cache["dec"] = dec_cache
    if residual:
        out = out + x[:, -1, :, :2]
    return out, cache


def backward(dout, cache, params) -> dict[str, np.ndarray]:
    """Parameter gradients for upstream gradient ``dout`` [B, N, 2]."""
    B, L, N, C, H = cache["shape"]
    grads = {}
    dv, grads["dec_W"], grads["dec_b"] = linear_backward(dout, cache["dec"], params["dec_W"])
    for k in reversed(range(len(cache["blocks"]))):
        s_cache, lin_cache, g_cache = cache["blocks"][k]
        da = gelu_backward(dv, g_cache)
        dv_s, grads[f"fno{k}_w_re"], grads[f"fno{k}_w_im"] = spectral_conv1d_backward(da, s_cache)
        dv_l, grads[f"fno{k}_skip_W"], grads[f"fno{k}_skip_b"] = linear_backward(
            da, lin_cache, params[f"fno{k}_skip_W"]
        )
        dv = dv_s + dv_l
    da, grads["gru_Uh"], _ = gru_recurrent_backward(dv.reshape(B * N, H), cache["gru"], params["gru_Uh"])
    da = da.reshape(L * B * N, 3 * H)
    # chain rule through the fused encoder/input projection
    xin_da = cache["xin"].T @ da                    # [C+1, 3H]
    da_sum = da.sum(axis=0)
    Wx = params["gru_Wx"]
    grads["gru_b"] = da_sum
    grads["gru_Wx"] = params["enc_W"].T @ xin_da + np.outer(params["enc_b"], da_sum)
    grads["enc_W"] = xin_da @ Wx.T
    grads["enc_b"] = da_sum @ Wx.T
    return {name: grads[name] for name in params}
