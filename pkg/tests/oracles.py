"""Brute-force reference implementations used as test oracles.

Everything here is written with explicit loops and no array filtering so it
shares no code path with the package.
"""

import math

import numpy as np


def kernel(size, sigma):
    c = (size - 1) / 2.0
    k = [[math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2 * sigma * sigma)) for j in range(size)]
         for i in range(size)]
    total = sum(sum(row) for row in k)
    return [[v / total for v in row] for row in k]


def mse(a, b):
    a, b = np.asarray(a), np.asarray(b)
    flat_a, flat_b = a.reshape(-1), b.reshape(-1)
    return sum((float(x) - float(y)) ** 2 for x, y in zip(flat_a, flat_b)) / flat_a.size


def psnr(a, b):
    m = mse(a, b)
    return 99.0 if m == 0 else -10.0 * math.log10(m)


def ssim_channel(x, y, size=11, sigma=1.5):
    w = kernel(size, sigma)
    H, W = len(x), len(x[0])
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    scores = []
    for r in range(H - size + 1):
        for c in range(W - size + 1):
            mx = my = sxx = syy = sxy = 0.0
            for i in range(size):
                for j in range(size):
                    mx += w[i][j] * x[r + i][c + j]
                    my += w[i][j] * y[r + i][c + j]
            for i in range(size):
                for j in range(size):
                    dx = x[r + i][c + j] - mx
                    dy = y[r + i][c + j] - my
                    sxx += w[i][j] * dx * dx
                    syy += w[i][j] * dy * dy
                    sxy += w[i][j] * dx * dy
            scores.append((2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return sum(scores) / len(scores)


def ssim(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    chans = [(a, b)] if a.ndim == 2 else [(a[..., k], b[..., k]) for k in range(a.shape[2])]
    return sum(ssim_channel(x.tolist(), y.tolist()) for x, y in chans) / len(chans)


def gray(img):
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img.tolist()
    H, W, C = img.shape
    return [[sum(float(img[i, j, k]) for k in range(C)) / C for j in range(W)] for i in range(H)]


def smooth(I, size=5, sigma=1.0):
    w = kernel(size, sigma)
    h = size // 2
    H, W = len(I), len(I[0])
    out = [[0.0] * W for _ in range(H)]
    for r in range(H):
        for c in range(W):
            acc = 0.0
            for i in range(size):
                for j in range(size):
                    rr, cc = r + i - h, c + j - h
                    if 0 <= rr < H and 0 <= cc < W:
                        acc += w[i][j] * I[rr][cc]
            out[r][c] = acc
    return out


def grad_field(I):
    H, W = len(I), len(I[0])
    G = [[0.0] * W for _ in range(H)]
    for m in range(1, H - 1):
        for n in range(1, W - 1):
            gx = I[m][n + 1] + I[m][n - 1] - 2 * I[m][n]
            gy = I[m + 1][n] + I[m - 1][n] - 2 * I[m][n]
            G[m][n] = math.sqrt(gx * gx + gy * gy)
    return G


def lap_field(I):
    H, W = len(I), len(I[0])
    L = [[0.0] * W for _ in range(H)]
    for m in range(1, H - 1):
        for n in range(1, W - 1):
            d = I[m][n + 1] + I[m][n - 1] + I[m + 1][n] + I[m - 1][n] - 4 * I[m][n]
            L[m][n] = d / (1 + I[m][n])
    return L


def score(A, B):
    num = den = 0.0
    for ra, rb in zip(A, B):
        for a, b in zip(ra, rb):
            num += abs(a - b)
            den += abs(a) + abs(b)
    return 1.0 if den == 0 else 1.0 - num / den


def gss(a, b):
    return score(grad_field(smooth(gray(a))), grad_field(smooth(gray(b))))


def lss(a, b):
    return score(lap_field(smooth(gray(a))), lap_field(smooth(gray(b))))
