"""Shared oracles for the test-suite."""

import math

import numpy as np
import torch


def central_difference(fn, param, index, step=1e-4):
    """Central finite difference of scalar ``fn()`` w.r.t. ``param[index]``."""
    return _differences(fn, param, index, step)[0]


def _differences(fn, param, index, step):
    # (central, forward, backward) differences
    with torch.no_grad():
        orig = param[index].item()
        mid = fn().item()
        param[index] = orig + step
        up = fn().item()
        param[index] = orig - step
        down = fn().item()
        param[index] = orig
    return (up - down) / (2 * step), (up - mid) / step, (mid - down) / step


def gradient_check(fn, named_params, n_samples, seed=0, step=1e-4, floor=1e-6,
                   skip_kinks=False, kink_tol=1e-3):
    """Compare autograd against central differences on randomly sampled entries.

    Returns a list of ``(name, index, analytic, numeric, rel_error)``. With
    ``skip_kinks`` an entry whose forward and backward differences disagree by
    more than ``kink_tol`` (relative) straddles a non-differentiable point; it
    is replaced by a fresh draw and counted in ``gradient_check.kinks``.
    """
    named_params = [(n, p) for n, p in named_params if p.requires_grad]
    for _, p in named_params:
        p.grad = None
    fn().backward()
    rng = np.random.default_rng(seed)
    out = []
    kinks = 0
    # spread samples across tensors so small ones are not starved
    while len(out) < n_samples:
        name, p = named_params[int(rng.integers(0, len(named_params)))]
        flat = int(rng.integers(0, p.numel()))
        index = np.unravel_index(flat, p.shape)
        analytic = p.grad[index].item()
        numeric, fwd, bwd = _differences(fn, p, index, step)
        if skip_kinks and abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), floor):
            kinks += 1
            continue
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        out.append((name, tuple(int(i) for i in index), analytic, numeric, rel))
    gradient_check.kinks = kinks
    return out


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def spatial_gate_loops(x, weight, bias, residual=True):
    b_, c_, h_, w_ = x.shape
    out = np.zeros_like(x)
    for b in range(b_):
        fs = []
        for h in range(h_):
            for w in range(w_):
                s = 0.0
                for c in range(c_):
                    s += x[b, c, h, w]
                fs.append(s / c_)
        for h in range(h_):
            for w in range(w_):
                p = h * w_ + w
                z = bias[p]
                for q in range(h_ * w_):
                    z += weight[p, q] * fs[q]
                g = sigmoid(z)
                for c in range(c_):
                    out[b, c, h, w] = g * x[b, c, h, w] + (x[b, c, h, w] if residual else 0.0)
    return out


def channel_gate_loops(x, weight, bias, residual=True):
    b_, c_, h_, w_ = x.shape
    out = np.zeros_like(x)
    for b in range(b_):
        fc = []
        for c in range(c_):
            s = 0.0
            for h in range(h_):
                for w in range(w_):
                    s += x[b, c, h, w]
            fc.append(s / (h_ * w_))
        for c in range(c_):
            z = bias[c]
            for k in range(c_):
                z += weight[c, k] * fc[k]
            g = sigmoid(z)
            for h in range(h_):
                for w in range(w_):
                    out[b, c, h, w] = g * x[b, c, h, w] + (x[b, c, h, w] if residual else 0.0)
    return out


def naive_centered_dft(x):
    """O(N^4) centered unitary DFT; shifted index k holds frequency k - N//2."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for ku in range(h):
        for kv in range(w):
            u, v = ku - h // 2, kv - w // 2
            acc = 0j
            for m in range(h):
                for n in range(w):
                    acc += x[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
            out[ku, kv] = acc / np.sqrt(h * w)
    return out


def naive_centered_idft(k):
    h, w = k.shape
    out = np.zeros((h, w), dtype=complex)
    for m in range(h):
        for n in range(w):
            acc = 0j
            for ku in range(h):
                for kv in range(w):
                    u, v = ku - h // 2, kv - w // 2
                    acc += k[ku, kv] * np.exp(2j * np.pi * (u * m / h + v * n / w))
            out[m, n] = acc / np.sqrt(h * w)
    return out
