# app/models/ops.py
"""1-D convolution, pooling and padding on (batch, channels, time) tensors"""
import numpy as np

from app.errors import ShapeError
from app.models.tensor import _record


def conv_output_length(length, kernel, stride=1, dilation=1, padding=0):
    return (length + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv_transpose_output_length(length, kernel, stride=1, padding=0):
    return (length - 1) * stride - 2 * padding + kernel


def _check_rank3(x, op):
    if x.ndim != 3:
        raise ShapeError(f"{op} expects a (batch, channels, time) tensor, got shape {x.shape}")


def _tap_index(kernel, t_out, stride, dilation):
    # (kernel, t_out) positions into the padded input
    return np.arange(kernel)[:, None] * dilation + np.arange(t_out)[None, :] * stride


def conv1d(x, weight, bias=None, stride=1, dilation=1, padding=0):
    """Cross-correlation of ``x`` (B, C_in, T) with ``weight`` (C_out, C_in, k)"""
    _check_rank3(x, 'conv1d')
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError(f"conv1d needs stride >= 1, dilation >= 1, padding >= 0; got {stride}, {dilation}, {padding}")
    out_ch, in_ch, kernel = weight.shape
    batch, channels, length = x.shape
    if channels != in_ch:
        raise ShapeError(f"conv1d channel mismatch: input has {channels}, weight expects {in_ch}")
    t_out = conv_output_length(length, kernel, stride, dilation, padding)
    if t_out < 1:
        raise ShapeError(f"conv1d output length {t_out} < 1 (T={length}, k={kernel}, d={dilation}, p={padding})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    idx = _tap_index(kernel, t_out, stride, dilation)
    cols = xp[:, :, idx]                                   # (B, C_in, k, T_out)
    w = weight.data
    out = np.tensordot(cols, w, axes=([1, 2], [1, 2]))     # (B, T_out, C_out)
    out = np.ascontiguousarray(out.transpose(0, 2, 1))
    if bias is not None:
        out = out + bias.data[None, :, None]

    padded_length = xp.shape[-1]

    def grad_fn(g):
        grad_w = np.tensordot(g, cols, axes=([0, 2], [0, 3]))           # (C_out, C_in, k)
        grad_cols = np.tensordot(w, g, axes=([0], [1]))                 # (C_in, k, B, T_out)
        grad_cols = grad_cols.transpose(2, 0, 1, 3)
        grad_xp = np.zeros((batch, channels, padded_length), dtype=g.dtype)
        span = stride * (t_out - 1) + 1
        for j in range(kernel):
            start = j * dilation
            grad_xp[:, :, start:start + span:stride] += grad_cols[:, :, j, :]
        grad_x = grad_xp[:, :, padding:padding + length] if padding else grad_xp
        grad_b = g.sum(axis=(0, 2)) if bias is not None else None
        return grad_x, grad_w, grad_b

    parents = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return _record(out, parents, lambda g: grad_fn(g)[:2], 'conv1d')
    return _record(out, parents, grad_fn, 'conv1d')


def conv_transpose1d(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution; ``weight`` is (C_in, C_out, k) and k >= stride"""
    _check_rank3(x, 'conv_transpose1d')
    in_ch, out_ch, kernel = weight.shape
    batch, channels, length = x.shape
    if channels != in_ch:
        raise ShapeError(f"conv_transpose1d channel mismatch: input has {channels}, weight expects {in_ch}")
    if stride < 1 or kernel < stride:
        raise ShapeError(f"conv_transpose1d needs 1 <= stride <= kernel, got stride {stride}, kernel {kernel}")
    t_out = conv_transpose_output_length(length, kernel, stride, padding)
    if t_out < 1:
        raise ShapeError(f"conv_transpose1d output length {t_out} < 1")

    full_length = (length - 1) * stride + kernel
    w = weight.data
    x_data = x.data
    contrib = np.tensordot(x_data, w, axes=([1], [0]))     # (B, T_in, C_out, k)
    full = np.zeros((batch, out_ch, full_length), dtype=np.result_type(x_data, w))
    span = stride * (length - 1) + 1
    for j in range(kernel):
        full[:, :, j:j + span:stride] += contrib[:, :, :, j].transpose(0, 2, 1)
    out = np.ascontiguousarray(full[:, :, padding:padding + t_out])
    if bias is not None:
        out = out + bias.data[None, :, None]

    idx = _tap_index(kernel, length, stride, 1)

    def grad_fn(g):
        g_full = np.zeros((batch, out_ch, full_length), dtype=g.dtype)
        g_full[:, :, padding:padding + t_out] = g
        gathered = g_full[:, :, idx]                                      # (B, C_out, k, T_in)
        grad_x = np.tensordot(gathered, w, axes=([1, 2], [1, 2]))         # (B, T_in, C_in)
        grad_x = np.ascontiguousarray(grad_x.transpose(0, 2, 1))
        grad_w = np.tensordot(x_data, gathered, axes=([0, 2], [0, 3]))    # (C_in, C_out, k)
        grad_b = g.sum(axis=(0, 2)) if bias is not None else None
        return grad_x, grad_w, grad_b

    parents = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return _record(out, parents, lambda g: grad_fn(g)[:2], 'conv_transpose1d')
    return _record(out, parents, grad_fn, 'conv_transpose1d')


def max_pool1d(x, kernel, stride=None):
    _check_rank3(x, 'max_pool1d')
    stride = stride or kernel
    if kernel < 1 or stride < 1:
        raise ShapeError(f"max_pool1d needs kernel >= 1 and stride >= 1, got {kernel}, {stride}")
    length = x.shape[-1]
    if length < kernel:
        raise ShapeError(f"max_pool1d window {kernel} is larger than the input length {length}")
    if kernel == 1 and stride == 1:
        return x
    t_out = (length - kernel) // stride + 1
    idx = _tap_index(kernel, t_out, stride, 1)                 # (k, T_out)
    windows = x.data[:, :, idx]                                # (B, C, k, T_out)
    arg = windows.argmax(axis=2)                               # (B, C, T_out)
    out = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]
    positions = arg + np.arange(t_out)[None, None, :] * stride
    shape = x.shape

    def grad_fn(g):
        grad_x = np.zeros(shape, dtype=g.dtype)
        b, c, _ = np.indices(g.shape)
        np.add.at(grad_x, (b, c, positions), g)
        return (grad_x,)

    return _record(np.ascontiguousarray(out), (x,), grad_fn, 'max_pool1d')


def avg_pool1d(x, kernel, stride=None, padding=0):
    """Average pooling; zero padding counts towards the average"""
    _check_rank3(x, 'avg_pool1d')
    stride = stride or kernel
    batch, channels, length = x.shape
    t_out = conv_output_length(length, kernel, stride, 1, padding)
    if t_out < 1:
        raise ShapeError(f"avg_pool1d window {kernel} does not fit input length {length}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    idx = _tap_index(kernel, t_out, stride, 1)
    out = xp[:, :, idx].mean(axis=2, dtype=x.dtype)
    padded_length = xp.shape[-1]

    def grad_fn(g):
        grad_xp = np.zeros((batch, channels, padded_length), dtype=g.dtype)
        share = g / kernel
        span = stride * (t_out - 1) + 1
        for j in range(kernel):
            grad_xp[:, :, j:j + span:stride] += share
        return (grad_xp[:, :, padding:padding + length],)

    return _record(out, (x,), grad_fn, 'avg_pool1d')


def pad1d(x, left, right, mode='constant'):
    """Pad the time axis with zeros or with a mirror image (edge not repeated)"""
    length = x.shape[-1]
    if left == 0 and right == 0:
        return x
    if mode == 'reflect' and (left >= length or right >= length):
        raise ShapeError(f"Reflect padding ({left}, {right}) needs an input longer than the pad, got {length}")
    if mode not in ('constant', 'reflect'):
        raise ValueError(f"Unsupported padding mode: {mode}")
    widths = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    out = np.pad(x.data, widths, mode=mode)

    def grad_fn(g):
        grad_x = np.array(g[..., left:left + length])
        if mode == 'reflect':
            if left:
                grad_x[..., 1:left + 1] += np.flip(g[..., :left], -1)
            if right:
                grad_x[..., length - 1 - right:length - 1] += np.flip(g[..., left + length:], -1)
        return (grad_x,)

    return _record(out, (x,), grad_fn, f'pad1d_{mode}')


def conv_weight_init(rng, shape, fan_in):
    """Uniform in +-sqrt(1 / fan_in)"""
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
