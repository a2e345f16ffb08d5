"""Superpixel partitions: SLIC, plus the grid and random (Voronoi) baselines.

All three samplers return a :class:`SuperpixelMap`; :func:`downsample_masks`
turns any of them into the per-region binary masks used at feature
resolution.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.color import rgb2lab

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class SuperpixelMap:
    labels: np.ndarray  # (H, W) int64, values in [0, count)
    count: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class MaskStack:
    """Disjoint binary masks at feature resolution.

    ``indices[i]`` is the superpixel label that produced ``masks[i]``; labels
    whose region vanished under downsampling are absent.
    """

    masks: np.ndarray  # (n, h, w) bool
    indices: np.ndarray  # (n,) int64
    source: str = "rgb"

    def __len__(self) -> int:
        return self.masks.shape[0]


def _compact(labels: np.ndarray) -> SuperpixelMap:
    # renumber by first appearance in raster order
    flat = labels.ravel()
    uniq, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
    return SuperpixelMap(rank[inverse].reshape(labels.shape), len(uniq))


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 image, got shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise DimensionError("empty image")
    return image


def _grid_shape(h: int, w: int, n: int) -> tuple[int, int]:
    ny = min(max(int(round(math.sqrt(n * h / w))), 1), h)
    nx = min(max(int(round(n / ny)), 1), w)
    return ny, nx


def _gradient(lab: np.ndarray) -> np.ndarray:
    p = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dx = p[1:-1, 2:] - p[1:-1, :-2]
    dy = p[2:, 1:-1] - p[:-2, 1:-1]
    return (dx**2).sum(-1) + (dy**2).sum(-1)


def _initial_centers(lab: np.ndarray, n: int) -> np.ndarray:
    h, w = lab.shape[:2]
    ny, nx = _grid_shape(h, w, n)
    grad = _gradient(lab)
    centers = []
    for i in range(ny):
        for j in range(nx):
            cy, cx = int((i + 0.5) * h / ny), int((j + 0.5) * w / nx)
            by, bx, best = cy, cx, grad[cy, cx]
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    y, x = cy + dy, cx + dx
                    if 0 <= y < h and 0 <= x < w and grad[y, x] < best:
                        by, bx, best = y, x, grad[y, x]
            centers.append((*lab[by, bx], by, bx))
    return np.array(centers, dtype=np.float64)


class _Slic:
    """Working state for one SLIC run; ``feats`` stacks (L, a, b, y, x) per pixel."""

    def __init__(self, lab: np.ndarray, n: int, compactness: float):
        self.h, self.w = lab.shape[:2]
        yy, xx = np.mgrid[0 : self.h, 0 : self.w]
        self.feats = np.dstack([lab, yy, xx]).astype(np.float64)
        self.step = math.sqrt(self.h * self.w / n)
        self.spatial = (compactness / self.step) ** 2
        self.centers = _initial_centers(lab, n)

    def dist2(self, feats: np.ndarray, center: np.ndarray) -> np.ndarray:
        d = feats - center
        return (d[..., :3] ** 2).sum(-1) + self.spatial * (d[..., 3:] ** 2).sum(-1)

    def _window(self, center: np.ndarray) -> tuple[int, int, int, int]:
        s = self.step
        y0 = max(int(math.floor(center[3] - s)), 0)
        y1 = min(int(math.ceil(center[3] + s)) + 1, self.h)
        x0 = max(int(math.floor(center[4] - s)), 0)
        x1 = min(int(math.ceil(center[4] + s)) + 1, self.w)
        return y0, y1, x0, x1

    def _assign_band(self, r0: int, r1: int, labels: np.ndarray, dist: np.ndarray) -> None:
        # candidates in fixed center order with strict '<': identical result for any banding
        for k, c in enumerate(self.centers):
            y0, y1, x0, x1 = self._window(c)
            y0, y1 = max(y0, r0), min(y1, r1)
            if y0 >= y1 or x0 >= x1:
                continue
            d = self.dist2(self.feats[y0:y1, x0:x1], c)
            dv, lv = dist[y0:y1, x0:x1], labels[y0:y1, x0:x1]
            better = d < dv
            dv[better] = d[better]
            lv[better] = k

    def assign(self, labels: np.ndarray | None, workers: int) -> tuple[np.ndarray, np.ndarray]:
        if labels is None:
            labels = np.full((self.h, self.w), -1, dtype=np.int64)
            dist = np.full((self.h, self.w), np.inf)
        else:
            labels = labels.copy()
            dist = self.dist2(self.feats, self.centers[labels])
        bands = np.linspace(0, self.h, max(1, min(workers, self.h)) + 1).astype(int)
        if len(bands) == 2:
            self._assign_band(0, self.h, labels, dist)
        else:
            with ThreadPoolExecutor(max_workers=len(bands) - 1) as pool:
                list(pool.map(lambda b: self._assign_band(b[0], b[1], labels, dist), zip(bands[:-1], bands[1:])))
        orphan = labels < 0
        if orphan.any():
            # only possible on the first pass when windows leave gaps
            f = self.feats[orphan]
            d = np.stack([self.dist2(f, c) for c in self.centers], axis=-1)
            labels[orphan] = d.argmin(-1)
            dist[orphan] = d.min(-1)
        return labels, dist

    def update(self, labels: np.ndarray) -> None:
        k = len(self.centers)
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k)
        nz = counts > 0
        for ch in range(5):
            sums = np.bincount(flat, weights=self.feats[..., ch].ravel(), minlength=k)
            self.centers[nz, ch] = sums[nz] / counts[nz]

    def cost(self, labels: np.ndarray) -> float:
        return float(self.dist2(self.feats, self.centers[labels]).sum())


def _enforce_connectivity(labels: np.ndarray, min_size: float) -> np.ndarray:
    """Split labels into 4-connected components and merge small ones into their
    neighbour sharing the longest border (ties to the lower component id)."""
    comps = np.zeros_like(labels)
    n = 0
    for lab, sl in enumerate(ndimage.find_objects(labels + 1)):
        if sl is None:
            continue
        region = labels[sl] == lab
        cl, k = ndimage.label(region)
        view = comps[sl]
        view[region] = cl[region] - 1 + n
        n += k
    if n == 1:
        return comps

    sizes = np.bincount(comps.ravel(), minlength=n).astype(np.int64)
    adj: list[dict[int, int]] = [dict() for _ in range(n)]
    for a, b in ((comps[:, :-1], comps[:, 1:]), (comps[:-1, :], comps[1:, :])):
        diff = a != b
        lo = np.minimum(a[diff], b[diff])
        hi = np.maximum(a[diff], b[diff])
        pairs, cnt = np.unique(lo * n + hi, return_counts=True)
        for p, c in zip(pairs.tolist(), cnt.tolist()):
            i, j = divmod(p, n)
            adj[i][j] = adj[i].get(j, 0) + c
            adj[j][i] = adj[j].get(i, 0) + c

    parent = np.arange(n)
    alive = np.ones(n, dtype=bool)
    heap = [(int(sizes[i]), i) for i in range(n) if sizes[i] < min_size]
    heapq.heapify(heap)
    while heap:
        size, i = heapq.heappop(heap)
        if not alive[i] or size != sizes[i] or not adj[i]:
            continue
        target = min(adj[i].items(), key=lambda kv: (-kv[1], kv[0]))[0]
        alive[i] = False
        parent[i] = target
        sizes[target] += sizes[i]
        for j, c in adj[i].items():
            del adj[j][i]
            if j != target:
                adj[target][j] = adj[target].get(j, 0) + c
                adj[j][target] = adj[j].get(target, 0) + c
        adj[i] = {}
        if sizes[target] < min_size and adj[target]:
            heapq.heappush(heap, (int(sizes[target]), target))

    root = parent.copy()
    for i in range(n):
        r = i
        while root[r] != r:
            r = root[r]
        root[i] = r
    return root[comps]


def slic_segment(
    image,
    n_segments: int,
    compactness: float = 10.0,
    iters: int = 10,
    seed: int = 0,
    *,
    workers: int = 1,
    trace: list | None = None,
) -> SuperpixelMap:
    """SLIC superpixels of an ``H x W x 3`` image with channels in [0, 1].

    The algorithm is fully deterministic; ``seed`` is accepted for parity with
    the other samplers and does not influence the result. ``workers`` splits
    the assignment step into row bands; output is bit-identical for any value.
    When ``trace`` is a list, the total squared assignment distance is appended
    after every assignment and every center update (a non-increasing series).
    """
    image = _check_image(image)
    h, w = image.shape[:2]
    if n_segments < 1 or n_segments > h * w:
        raise ParameterError(f"n_segments must be in [1, {h * w}], got {n_segments}")
    lab = rgb2lab(np.clip(image, 0.0, 1.0))
    state = _Slic(lab, n_segments, compactness)

    labels, dist = state.assign(None, workers)
    for it in range(max(iters, 1)):
        if it > 0:
            labels, dist = state.assign(labels, workers)
        if trace is not None:
            trace.append(float(dist.sum()))
        state.update(labels)
        if trace is not None:
            trace.append(state.cost(labels))

    min_size = state.step**2 / 4.0
    return _compact(_enforce_connectivity(labels, min_size))


def _split_sizes(total: int, parts: int) -> np.ndarray:
    # first (total % parts) parts get one extra element
    base, extra = divmod(total, parts)
    return np.array([base + (i < extra) for i in range(parts)])


def grid_masks(h: int, w: int, n_segments: int) -> SuperpixelMap:
    """Rectangular tiling with exactly ``min(n_segments, h*w)`` cells.

    Uses ``rows = floor(sqrt(n))`` and ``cols = ceil(n / rows)``; the last row
    holds the remainder cells and spans the full width.
    """
    if h < 1 or w < 1:
        raise DimensionError(f"grid size must be positive, got {h}x{w}")
    if n_segments < 1:
        raise ParameterError(f"n_segments must be >= 1, got {n_segments}")
    n = min(n_segments, h * w)
    rows = min(max(math.isqrt(n), 1), h)
    cols = -(-n // rows)
    if cols > w:
        cols = w
        rows = -(-n // cols)
    last = n - (rows - 1) * cols

    labels = np.empty((h, w), dtype=np.int64)
    row_edges = np.concatenate([[0], np.cumsum(_split_sizes(h, rows))])
    label = 0
    for r in range(rows):
        ncol = last if r == rows - 1 else cols
        col_edges = np.concatenate([[0], np.cumsum(_split_sizes(w, ncol))])
        for c in range(ncol):
            labels[row_edges[r] : row_edges[r + 1], col_edges[c] : col_edges[c + 1]] = label
            label += 1
    return SuperpixelMap(labels, n)


def random_masks(h: int, w: int, n_segments: int, seed: int = 0) -> SuperpixelMap:
    """Voronoi partition around ``n_segments`` distinct random seed pixels.

    Every pixel joins its nearest seed in Euclidean distance, ties to the
    lower seed index; label ``i`` belongs to seed ``i``.
    """
    if h < 1 or w < 1:
        raise DimensionError(f"grid size must be positive, got {h}x{w}")
    if n_segments < 1 or n_segments > h * w:
        raise ParameterError(f"n_segments must be in [1, {h * w}], got {n_segments}")
    rng = np.random.default_rng(seed)
    seeds = rng.choice(h * w, size=n_segments, replace=False)
    sy, sx = np.divmod(seeds, w)
    yy, xx = np.divmod(np.arange(h * w), w)
    labels = np.empty(h * w, dtype=np.int64)
    chunk = max(1, (1 << 22) // n_segments)
    for s in range(0, h * w, chunk):
        d = (yy[s : s + chunk, None] - sy) ** 2 + (xx[s : s + chunk, None] - sx) ** 2
        labels[s : s + chunk] = d.argmin(axis=1)
    return SuperpixelMap(labels.reshape(h, w), n_segments)


def downsample_masks(sp: SuperpixelMap, h: int, w: int, source: str = "rgb") -> MaskStack:
    """Majority-vote the label map down to ``h x w`` and split it into masks.

    Output cell ``(i, j)`` pools source rows ``[i*H/h, (i+1)*H/h)`` and the
    analogous columns; ties go to the smallest label.
    """
    H, W = sp.labels.shape
    if not (1 <= h <= H and 1 <= w <= W):
        raise DimensionError(f"cannot downsample {H}x{W} labels to {h}x{w}")
    n = sp.count
    cell = ((np.arange(H) * h) // H)[:, None] * w + ((np.arange(W) * w) // W)[None, :]
    counts = np.bincount((cell * n + sp.labels).ravel(), minlength=h * w * n).reshape(h * w, n)
    low = counts.argmax(axis=1).reshape(h, w)
    present = np.unique(low)
    masks = low[None, :, :] == present[:, None, None]
    return MaskStack(masks, present.astype(np.int64), source)
