"""Reference metric values frozen into tests/reference_values.hpp.

Images come from the splitmix64 generator mirrored in tests/test_util.hpp.
PSNR is evaluated directly, SSIM with scikit-image (Gaussian weights,
sigma 1.5, population covariance) and MS-SSIM with a direct 2-D loop
implementation below. Run: python3 tests/oracles/metric_refs.py
"""
import math

import numpy as np
from scipy.signal import correlate2d
from skimage.metrics import structural_similarity

MASK = (1 << 64) - 1


class SplitMix:
    def __init__(self, seed):
        self.s = seed & MASK

    def next(self):
        self.s = (self.s + 0x9E3779B97F4A7C15) & MASK
        z = self.s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)


def u8_pair(seed, n, c, h, w, noise):
    g = SplitMix(seed)
    a = np.zeros((n, c, h, w), dtype=np.int64)
    for i in range(n):
        for ch in range(c):
            for y in range(h):
                for x in range(w):
                    a[i, ch, y, x] = (8 * y + 5 * x + 60 * ch + g.next() % 48) & 255
    b = np.zeros_like(a)
    for i in range(n):
        for ch in range(c):
            for y in range(h):
                for x in range(w):
                    d = int(g.next() % (2 * noise + 1)) - noise
                    b[i, ch, y, x] = min(255, max(0, a[i, ch, y, x] + d))
    return a, b


def metric_pair_shape(k):
    return 16 + 2 * (k % 4), 18 + 3 * (k % 3)


def window(size, sigma):
    d = np.arange(size) - (size - 1) / 2
    g = np.exp(-(d * d) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim_level(a, b, win, c1, c2):
    f = lambda v: correlate2d(v, win, mode="valid")
    ma, mb = f(a), f(b)
    saa = f(a * a) - ma * ma
    sbb = f(b * b) - mb * mb
    sab = f(a * b) - ma * mb
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1)
    return (lum * cs).mean(), cs.mean()


def ms_ssim(a, b, size, sigma, scales, data_range):
    weights = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])[:scales]
    weights = weights / weights.sum()
    win = window(size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for i in range(a.shape[0]):
        for ch in range(a.shape[1]):
            x, y = a[i, ch], b[i, ch]
            prod = 1.0
            for j in range(scales):
                s, cs = ssim_level(x, y, win, c1, c2)
                lvl = s if j == scales - 1 else cs
                prod *= max(lvl, 1e-8) ** weights[j]
                if j < scales - 1:
                    hh, ww = x.shape[0] // 2, x.shape[1] // 2
                    x = x[: 2 * hh, : 2 * ww].reshape(hh, 2, ww, 2).mean(axis=(1, 3))
                    y = y[: 2 * hh, : 2 * ww].reshape(hh, 2, ww, 2).mean(axis=(1, 3))
            vals.append(prod)
    return float(np.mean(vals))


def main():
    print("// metric pairs: (psnr dB, ssim)")
    for k in range(10):
        h, w = metric_pair_shape(k)
        a, b = u8_pair(1000 + k, 1, 3, h, w, 30)
        fa, fb = a[0] / 255.0, b[0] / 255.0
        mse = np.mean((fa - fb) ** 2)
        psnr = 10 * math.log10(1.0 / mse)
        ssim = structural_similarity(fa, fb, data_range=1.0, channel_axis=0, gaussian_weights=True,
                                     sigma=1.5, use_sample_covariance=False)
        print(f"{{{psnr!r}, {float(ssim)!r}}},")
    chk = np.fromfunction(lambda y, x: (y + x) % 2, (32, 32)).astype(float)
    print("checkerboard", repr(float(structural_similarity(chk, 1 - chk, data_range=1.0, gaussian_weights=True,
                                                     sigma=1.5, use_sample_covariance=False))))
    a, b = u8_pair(77, 2, 2, 48, 48, 40)
    print("msssim3", repr(ms_ssim(2 * a / 255 - 1, 2 * b / 255 - 1, 11, 1.5, 3, 2.0)))
    a, b = u8_pair(78, 1, 3, 28, 28, 60)
    print("msssim2_w7", repr(ms_ssim(2 * a / 255 - 1, 2 * b / 255 - 1, 7, 1.5, 2, 2.0)))
    a, b = u8_pair(79, 1, 1, 24, 30, 50)
    print("ssim1_w11", repr(ms_ssim(2 * a / 255 - 1, 2 * b / 255 - 1, 11, 1.5, 1, 2.0)))


if __name__ == "__main__":
    main()
