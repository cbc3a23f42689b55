"""Independent reference implementations used to check the package.

They are written for clarity rather than speed and share no code with the
package beyond plain data types.
"""

import math
from fractions import Fraction

import numpy as np

M64 = (1 << 64) - 1


def splitmix(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def mix(seed: int, *keys: int) -> int:
    h = splitmix(seed & M64)
    for k in keys:
        h = splitmix(h ^ (k & M64))
    return h


def gradient(seed: int, ix: int, iy: int) -> tuple[float, float]:
    h = splitmix(splitmix((seed ^ ix) & M64) ^ splitmix(iy))
    a = (h >> 61) * math.pi / 4
    return math.cos(a), math.sin(a)


def quintic(t: float) -> float:
    return 6 * t ** 5 - 15 * t ** 4 + 10 * t ** 3


def noise_at(x: float, y: float, seed: int) -> float:
    """Scalar gradient noise at lattice coordinates (x, y)."""
    x0, y0 = math.floor(x), math.floor(y)
    fx, fy = x - x0, y - y0
    total = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            gx, gy = gradient(seed, x0 + dx, y0 + dy)
            dot = gx * (fx - dx) + gy * (fy - dy)
            wx = quintic(fx) if dx else 1 - quintic(fx)
            wy = quintic(fy) if dy else 1 - quintic(fy)
            total += wx * wy * dot
    return max(-1.0, min(1.0, math.sqrt(2) * total))


def noise_field_scalar(w: int, h: int, px: int, py: int, seed: int) -> np.ndarray:
    out = np.empty((h, w))
    for r in range(h):
        for c in range(w):
            out[r, c] = noise_at(c * px / w, r * py / h, seed)
    return out


def _splitmix_np(x):
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def noise_field(w: int, h: int, p: int, seed: int) -> np.ndarray:
    """Array version of :func:`noise_at`, written independently of the package."""
    xs = np.array([c * p / w for c in range(w)])
    ys = np.array([r * p / h for r in range(h)])
    X, Y = np.meshgrid(xs, ys)
    X0, Y0 = np.floor(X), np.floor(Y)
    FX, FY = X - X0, Y - Y0
    total = np.zeros_like(X)
    with np.errstate(over="ignore"):
        for dx in (0, 1):
            for dy in (0, 1):
                ix = (X0 + dx).astype(np.uint64)
                iy = (Y0 + dy).astype(np.uint64)
                hsh = _splitmix_np(_splitmix_np(np.uint64(seed) ^ ix) ^ _splitmix_np(iy))
                ang = (hsh >> np.uint64(61)).astype(np.float64) * (np.pi / 4)
                dot = np.cos(ang) * (FX - dx) + np.sin(ang) * (FY - dy)
                wx = FX ** 3 * (FX * (FX * 6 - 15) + 10)
                wy = FY ** 3 * (FY * (FY * 6 - 15) + 10)
                total += (wx if dx else 1 - wx) * (wy if dy else 1 - wy) * dot
    return np.clip(np.sqrt(2) * total, -1, 1)


def fractal_field(w, h, persistence, lacunarity, res, octaves, seed) -> np.ndarray:
    out = np.zeros((h, w))
    for i in range(1, octaves + 1):
        p = max(1, int(round(res * lacunarity ** (i - 1))))
        out = out + persistence ** (i - 1) * noise_field(w, h, p, mix(seed, i))
    return out


# --- FROC ------------------------------------------------------------------

def box_dice(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0, min(ay + ah, by + bh) - max(ay, by))
    return 2 * iw * ih / (aw * ah + bw * bh)


def label_image(preds, gts):
    """preds: list of (box, conf); gts: list of (box, evaluable). Returns (tp, fp, ignored)."""
    order = sorted(preds, key=lambda p: (-p[1], p[0][0], p[0][1]))
    taken = set()
    tp = fp = ign = 0
    for box, _ in order:
        hits = [j for j, (g, _) in enumerate(gts) if box_dice(box, g) >= 0.2]
        if not hits:
            fp += 1
            continue
        free = [j for j in hits if gts[j][1] and j not in taken]
        if free:
            j = max(free, key=lambda j: (box_dice(box, gts[j][0]), -j))
            taken.add(j)
            tp += 1
        else:
            ign += 1
    return tp, fp, ign


def froc_points(preds_per_image, gts_per_image):
    """Brute force: re-match from scratch at every distinct confidence."""
    n_img = len(gts_per_image)
    n_gt = sum(ev for gts in gts_per_image for _, ev in gts)
    confs = sorted({c for preds in preds_per_image for _, c in preds}, reverse=True)
    pts = [(math.inf, 0.0, 0.0)]
    for t in confs:
        tp = fp = 0
        for preds, gts in zip(preds_per_image, gts_per_image):
            a, b, _ = label_image([p for p in preds if p[1] >= t], gts)
            tp += a
            fp += b
        pts.append((t, fp / n_img, tp / n_gt))
    return pts


def exact_area(points, max_fpi=1) -> float:
    """Trapezoid area under the FROC polyline on [0, max_fpi] in rational arithmetic."""
    xs = [Fraction(p[1]) for p in points]
    ys = [Fraction(p[2]) for p in points]
    m = Fraction(max_fpi)
    area = Fraction(0)
    for i in range(len(xs) - 1):
        x0, x1, y0, y1 = xs[i], xs[i + 1], ys[i], ys[i + 1]
        if x0 >= m:
            break
        if x1 > m:
            y1 = y0 + (y1 - y0) * (m - x0) / (x1 - x0)
            x1 = m
        area += (x1 - x0) * (y0 + y1) / 2
    if xs[-1] < m:
        area += (m - xs[-1]) * ys[-1]
    return float(area / m)


def interp(points, x) -> float:
    """TPR at ``x``: last vertex with fp <= x, linear to the next, flat beyond the end."""
    xs = [p[1] for p in points]
    ys = [p[2] for p in points]
    i = max(j for j in range(len(xs)) if xs[j] <= x)
    if i == len(xs) - 1:
        return ys[-1]
    return ys[i] + (ys[i + 1] - ys[i]) * (x - xs[i]) / (xs[i + 1] - xs[i])


# --- GP --------------------------------------------------------------------

def gp_dense(X, y, q, gamma=0.25, jitter=1e-6):
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n = len(X)
    K = np.array([[math.exp(-gamma / 2 * float(np.sum((X[i] - X[j]) ** 2))) for j in range(n)] for i in range(n)])
    K += jitter * np.eye(n)
    k = np.array([math.exp(-gamma / 2 * float(np.sum((X[i] - q) ** 2))) for i in range(n)])
    ybar = y.mean()
    mean = k @ np.linalg.solve(K, y - ybar) + ybar
    var = 1 - k @ np.linalg.solve(K, k)
    return mean, max(var, 0.0)


# --- location schedule -------------------------------------------------------

def evaluations_until_accept(region_mean: float, threshold: int, max_iteration: int) -> int:
    """Candidate count when every candidate sees the same mean."""
    count = 0
    rejected = 0
    while True:
        count += 1
        if region_mean <= threshold:
            return count
        rejected += 1
        if rejected == max_iteration:
            threshold += 1
            rejected = 0


# --- random FROC instances -----------------------------------------------------

def random_froc_instance(rng, max_images=5, max_preds=10):
    """Small clustered instance: (preds_per_image, gts_per_image) as plain tuples."""
    n_img = int(rng.integers(1, max_images + 1))
    preds, gts = [], []
    for _ in range(n_img):
        g = []
        for _ in range(int(rng.integers(0, 4))):
            g.append(((int(rng.integers(0, 20)), int(rng.integers(0, 20)), int(rng.integers(2, 8)),
                       int(rng.integers(2, 8))), bool(rng.random() < 0.8)))
        p = []
        for _ in range(int(rng.integers(0, max_preds + 1))):
            if g and rng.random() < 0.6:
                (x, y, w, h), _ = g[int(rng.integers(len(g)))]
                box = (x + int(rng.integers(-2, 3)), y + int(rng.integers(-2, 3)),
                       max(1, w + int(rng.integers(-2, 3))), max(1, h + int(rng.integers(-2, 3))))
            else:
                box = (int(rng.integers(0, 24)), int(rng.integers(0, 24)), int(rng.integers(1, 8)),
                       int(rng.integers(1, 8)))
            # coarse confidences so ties occur
            p.append((box, float(rng.integers(0, 6)) / 5))
        preds.append(p)
        gts.append(g)
    if not any(ev for gg in gts for _, ev in gg):
        gts[0].append(((0, 0, 4, 4), True))
    return preds, gts
