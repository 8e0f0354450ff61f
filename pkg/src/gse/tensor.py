"""
Dense image-tensor primitives.

Images and perturbations are numpy arrays of shape (M, N, C) in row-major
(i, j, c) order. Pixel masks are (M, N) arrays of zeros and ones.
"""

import struct

import numpy as np

EPS_ZERO = 1e-12
MAGIC = b"GSET"
_HEADER = struct.Struct("<4sIII")


def clip_to_domain(x, lo=0.0, hi=1.0):
    """Clamp every entry of `x` into [lo, hi]."""
    if lo > hi:
        raise ValueError(f"empty domain [{lo}, {hi}]")
    return np.clip(x, lo, hi)


def gaussian_kernel(n=3, sigma_blur=1.0):
    """
    Square Gaussian blur kernel of odd side `n`, normalized to unit sum.

    A non-finite (infinite) `sigma_blur` gives the uniform box kernel.
    """
    if int(n) != n or n < 1 or n % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {n}")
    if not sigma_blur > 0:
        raise ValueError(f"sigma_blur must be positive, got {sigma_blur}")
    n = int(n)
    half = n // 2
    offsets = np.arange(n) - half
    sq = offsets[:, None] ** 2 + offsets[None, :] ** 2
    if np.isinf(sigma_blur):
        weights = np.ones((n, n))
    else:
        weights = np.exp(-sq / (2.0 * sigma_blur**2))
    return weights / weights.sum()


def conv2d_same(mask, kernel):
    """
    Same-size 2-D correlation of `mask` with `kernel`, zero padded.

    out[i, j] = sum_{k,l} kernel[k + h, l + h] * mask[i + k, j + l] with
    h = n // 2 and off-image mask entries treated as 0.
    """
    mask = np.asarray(mask, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    n = kernel.shape[0]
    if kernel.shape != (n, n) or n % 2 == 0:
        raise ValueError(f"kernel must be square with odd side, got {kernel.shape}")
    if n >= min(mask.shape):
        raise ValueError(f"kernel of size {n} does not fit a {mask.shape} image")
    h = n // 2
    padded = np.pad(mask, h)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (n, n))
    return np.einsum("ijkl,kl->ij", windows, kernel)


def channel_abs_sum(w):
    """Per-pixel sum of absolute values over the channel axis."""
    return np.abs(w).sum(axis=-1)


def save_tensor(path, x):
    """Write an (M, N, C) tensor as a GSET file (header + float32 LE payload)."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"expected an (M, N, C) tensor, got shape {x.shape}")
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(x))


def tensor_to_bytes(x):
    m, n, c = x.shape
    return _HEADER.pack(MAGIC, m, n, c) + np.ascontiguousarray(x, dtype="<f4").tobytes()


def tensor_from_bytes(buf):
    if len(buf) < _HEADER.size:
        raise ValueError("truncated GSET header")
    magic, m, n, c = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    expected = _HEADER.size + 4 * m * n * c
    if len(buf) != expected:
        raise ValueError(f"GSET payload has {len(buf)} bytes, expected {expected}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size)
    return data.reshape(m, n, c).astype(np.float64)


def load_tensor(path):
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())
