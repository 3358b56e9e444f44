"""Independent oracles used across the test suite.

Everything here is written as plain scalar loops or closed forms so the
expected values never share code with the implementations they check.
"""

import math

import numpy as np
import torch


def central_difference_grad(fn, x, h=1e-5):
    """Gradient of a scalar function by central differences, one coordinate
    at a time. x is a double-precision tensor; fn takes a tensor like x."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        hi = float(fn(x).detach())
        flat[i] = orig - h
        lo = float(fn(x).detach())
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return grad


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def ntxent_bruteforce(z1, z2, tau):
    """Scalar enumeration of the NT-Xent loss over the 2N x 2N similarity table."""
    views = [np.asarray(v, dtype=np.float64) for v in list(z1) + list(z2)]
    n = len(z1)
    total = 0.0
    for i in range(2 * n):
        pos = i + n if i < n else i - n
        num = math.exp(float(np.dot(views[i], views[pos])) / tau)
        den = 0.0
        for k in range(2 * n):
            if k != i:
                den += math.exp(float(np.dot(views[i], views[k])) / tau)
        total += -math.log(num / den)
    return total / (2 * n)


def supcon_fake_bruteforce(z_fake, z_real_1, z_real_2, tau):
    """Scalar enumeration of the fake-vs-real supervised contrastive loss."""
    fakes = [np.asarray(v, dtype=np.float64) for v in z_fake]
    reals = [np.asarray(v, dtype=np.float64) for v in list(z_real_1) + list(z_real_2)]
    m = len(fakes)
    total = 0.0
    for i in range(m):
        den = 0.0
        for j in range(m):
            if j != i:
                den += math.exp(float(np.dot(fakes[i], fakes[j])) / tau)
        for r in reals:
            den += math.exp(float(np.dot(fakes[i], r)) / tau)
        inner = 0.0
        for j in range(m):
            if j != i:
                num = math.exp(float(np.dot(fakes[i], fakes[j])) / tau)
                inner += -math.log(num / den)
        total += inner / (m - 1)
    return total / m


def hinge_d_bruteforce(real, fake):
    real = [float(v) for v in real]
    fake = [float(v) for v in fake]
    return sum(max(0.0, 1 - r) for r in real) / len(real) + sum(
        max(0.0, 1 + f) for f in fake
    ) / len(fake)


def bce_bruteforce(real, fake):
    """(d_loss, g_loss) evaluated with scalar sigmoid/log arithmetic."""

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    d = -sum(math.log(sig(r)) for r in real) / len(real) - sum(
        math.log(1 - sig(f)) for f in fake
    ) / len(fake)
    g = -sum(math.log(sig(f)) for f in fake) / len(fake)
    return d, g


def covariance_bruteforce(rows):
    """Unbiased covariance via explicit double loops."""
    rows = np.asarray(rows, dtype=np.float64)
    n, d = rows.shape
    mu = [sum(rows[i, j] for i in range(n)) / n for j in range(d)]
    sigma = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            sigma[a, b] = sum((rows[i, a] - mu[a]) * (rows[i, b] - mu[b]) for i in range(n)) / (
                n - 1
            )
    return np.asarray(mu), sigma


def diagonal_fid_closed_form(mu_r, var_r, mu_g, var_g):
    """FID between diagonal Gaussians: sum of squared mean gaps plus squared
    standard-deviation gaps."""
    mu_r, var_r = np.asarray(mu_r, dtype=np.float64), np.asarray(var_r, dtype=np.float64)
    mu_g, var_g = np.asarray(mu_g, dtype=np.float64), np.asarray(var_g, dtype=np.float64)
    return float(((mu_r - mu_g) ** 2).sum() + ((np.sqrt(var_r) - np.sqrt(var_g)) ** 2).sum())


def inception_score_bruteforce(probs, splits):
    """Direct scalar evaluation of the exponentiated-KL score per split."""
    probs = np.asarray(probs, dtype=np.float64)
    groups = np.array_split(probs, splits)
    scores = []
    for g in groups:
        n, k = g.shape
        marginal = [sum(g[i, y] for i in range(n)) / n for y in range(k)]
        kls = []
        for i in range(n):
            kl = 0.0
            for y in range(k):
                p = g[i, y]
                if p > 0:
                    kl += p * (math.log(p) - math.log(max(marginal[y], 1e-16)))
            kls.append(kl)
        scores.append(math.exp(sum(kls) / n))
    mean = sum(scores) / len(scores)
    var = sum((s - mean) ** 2 for s in scores) / len(scores)
    return mean, math.sqrt(var)
