"""Pre/post-processing around the boundary network, and pixel metrics.

Conventions used throughout:

* pixel ``(x, y)`` has its centre at ``(x + 0.5, y + 0.5)``; ``y`` grows downward;
* a boundary value ``v`` in [0, 1] is the fraction of the column height that is
  road, counted up from the bottom edge, so a column with ``v`` holds
  ``floor(h * v + 0.5)`` road pixels;
* images are resized bilinearly (half-pixel centres), masks by nearest neighbour.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ShapeError, Tensor3

WINDOW = (600, 160)


class GeometryError(ValueError):
    pass


@dataclass
class RoadFrame:
    rgb: Tensor3
    mask: Tensor3 | None = None
    name: str = ""

    def __post_init__(self):
        if self.rgb.shape.channels != 3:
            raise ShapeError(f"rgb frame needs 3 channels, got {self.rgb.shape.channels}")
        if self.mask is not None:
            ms, rs = self.mask.shape, self.rgb.shape
            if (ms.width, ms.height, ms.channels) != (rs.width, rs.height, 1):
                raise ShapeError(f"mask {ms} does not match frame {rs}")

    @property
    def size(self) -> tuple[int, int]:
        s = self.rgb.shape
        return s.width, s.height

    def mask_array(self) -> np.ndarray:
        """The mask as an (h, w) bool array."""
        return self.mask.data[:, :, 0] > 0.5


@dataclass
class RoadSample:
    input: Tensor3
    target: np.ndarray


@dataclass(frozen=True)
class PyramidGeometry:
    original_size: tuple[int, int]
    crop_origin: tuple[int, int]
    crop_size: tuple[int, int]
    scale: tuple[float, float]


@dataclass
class PyramidPair:
    near: Tensor3
    far: Tensor3
    geometry: PyramidGeometry


# --------------------------------------------------------------------------
# resampling

def _bilinear_axis(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize an (h, w, d) array to ``size`` = (w, h)."""
    w_out, h_out = size
    h_in, w_in = img.shape[:2]
    if (w_in, h_in) == (w_out, h_out):
        return img.copy()
    y0, y1, fy = _bilinear_axis(h_in, h_out)
    x0, x1, fx = _bilinear_axis(w_in, w_out)
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy[:, None, None]) + bot * fy[:, None, None]


def resize_nearest(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    w_out, h_out = size
    h_in, w_in = mask.shape[:2]
    ys = np.minimum(((np.arange(h_out) + 0.5) * h_in / h_out).astype(int), h_in - 1)
    xs = np.minimum(((np.arange(w_out) + 0.5) * w_in / w_out).astype(int), w_in - 1)
    return mask[ys][:, xs]


def with_index_channels(rgb: np.ndarray) -> np.ndarray:
    """Append x/(w-1) and y/(h-1) channels in the array's own coordinates."""
    h, w = rgb.shape[:2]
    xs = np.arange(w) / (w - 1) if w > 1 else np.zeros(1)
    ys = np.arange(h) / (h - 1) if h > 1 else np.zeros(1)
    out = np.empty((h, w, rgb.shape[2] + 2))
    out[:, :, :rgb.shape[2]] = rgb
    out[:, :, -2] = xs[None, :]
    out[:, :, -1] = ys[:, None]
    return out


def crop_origin(size, window=WINDOW) -> tuple[int, int]:
    (w, h), (cw, ch) = size, window
    if w < cw or h < ch:
        raise GeometryError(f"frame {w}x{h} is smaller than the {cw}x{ch} crop")
    return (w - cw) // 2, (h - ch) // 2


def pyramid_preprocess(frame: RoadFrame, window=WINDOW) -> PyramidPair:
    w, h = frame.size
    cw, ch = window
    x0, y0 = crop_origin((w, h), window)
    rgb = frame.rgb.data
    near = with_index_channels(resize_bilinear(rgb, window))
    far = with_index_channels(rgb[y0:y0 + ch, x0:x0 + cw])
    geom = PyramidGeometry((w, h), (x0, y0), (cw, ch), (cw / w, ch / h))
    return PyramidPair(Tensor3(near), Tensor3(far), geom)


# --------------------------------------------------------------------------
# boundary vectors <-> masks

def boundary_from_mask(mask) -> np.ndarray:
    """Per column, the bottom-connected road run length divided by the height."""
    m = _mask2d(mask) > 0.5
    h = m.shape[0]
    # index of the first background pixel scanning upward from the bottom
    up = m[::-1]
    run = np.where(up.all(axis=0), h, np.argmin(up, axis=0))
    return run / h


def road_rows(vec, h: int) -> np.ndarray:
    v = np.clip(np.asarray(vec, dtype=np.float64), 0.0, 1.0)
    return np.floor(h * v + 0.5).astype(int)


def boundary_to_mask(vec, size: tuple[int, int]) -> np.ndarray:
    """(h, w) bool mask: road where the pixel centre lies below the boundary."""
    w, h = size
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (w,):
        raise ShapeError(f"boundary of length {vec.shape} for width {w}")
    rows = road_rows(vec, h)
    return np.arange(h)[:, None] >= (h - rows)[None, :]


def boundary_polygon(vec, size) -> list[tuple[float, float]]:
    """Closed polygon through the column-centre boundary vertices and the bottom edge."""
    w, h = size
    tops = h - road_rows(vec, h)
    pts = [(0.0, float(h)), (0.0, float(tops[0]))]
    pts += [(x + 0.5, float(t)) for x, t in enumerate(tops)]
    pts += [(float(w), float(tops[-1])), (float(w), float(h))]
    return pts


def fill_polygon(vertices, size: tuple[int, int]) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centres; returns an (h, w) bool mask.

    Edges use half-open spans in y, so shared vertices are counted once.
    """
    w, h = size
    pts = np.asarray(vertices, dtype=np.float64)
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    keep = y0 != y1
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
    ylo, yhi = np.minimum(y0, y1), np.maximum(y0, y1)
    mask = np.zeros((h, w), dtype=bool)
    centres = np.arange(w) + 0.5
    for row in range(h):
        yc = row + 0.5
        act = (ylo <= yc) & (yc < yhi)
        if not act.any():
            continue
        xs = x0[act] + (yc - y0[act]) * (x1[act] - x0[act]) / (y1[act] - y0[act])
        xs.sort()
        for a, b in zip(xs[0::2], xs[1::2]):
            mask[row] |= (centres >= a) & (centres < b)
    return mask


def pyramid_merge(near_mask: np.ndarray, far_mask: np.ndarray, geom: PyramidGeometry) -> np.ndarray:
    w, h = geom.original_size
    cw, ch = geom.crop_size
    x0, y0 = geom.crop_origin
    if far_mask.shape != (ch, cw):
        raise GeometryError(f"far mask is {far_mask.shape[::-1]}, crop is {cw}x{ch}")
    if x0 + cw > w or y0 + ch > h:
        raise GeometryError("crop rectangle falls outside the frame")
    out = resize_nearest(np.asarray(near_mask, dtype=bool), (w, h))
    out[y0:y0 + ch, x0:x0 + cw] = far_mask
    return out


def _mask2d(mask) -> np.ndarray:
    m = mask.data if isinstance(mask, Tensor3) else np.asarray(mask)
    if m.ndim == 3:
        m = m[:, :, 0]
    return m


# --------------------------------------------------------------------------
# training samples

@dataclass
class AugmentResult:
    samples: list[RoadSample]
    skipped_scales: list[float] = field(default_factory=list)
    windows_per_scale: dict = field(default_factory=dict)


def window_positions(size, window=WINDOW, stride=(60, 20)) -> list[tuple[int, int]]:
    (w, h), (cw, ch), (sx, sy) = size, window, stride
    if w < cw or h < ch:
        return []
    return [(x, y) for y in range(0, h - ch + 1, sy) for x in range(0, w - cw + 1, sx)]


def make_sample(rgb: np.ndarray, mask: np.ndarray) -> RoadSample:
    return RoadSample(Tensor3(with_index_channels(rgb)), boundary_from_mask(mask))


def sliding_window_augment(frame: RoadFrame, scales=(0.5, 1.0), window=WINDOW,
                           stride=(60, 20), require_road: bool = False) -> AugmentResult:
    """Cut window-sized training samples out of rescaled copies of a frame.

    ``require_road`` drops windows whose bottom row has no road at all.
    """
    if frame.mask is None:
        raise ValueError("augmentation needs a frame with a mask")
    w, h = frame.size
    res = AugmentResult([])
    for s in scales:
        size = (int(np.floor(w * s)), int(np.floor(h * s)))
        pos = window_positions(size, window, stride)
        if not pos:
            res.skipped_scales.append(s)
            res.windows_per_scale[s] = 0
            continue
        rgb = resize_bilinear(frame.rgb.data, size)
        mask = resize_nearest(frame.mask_array(), size)
        n = 0
        for x, y in pos:
            m = mask[y:y + window[1], x:x + window[0]]
            if require_road and not m[-1].any():
                continue
            res.samples.append(make_sample(rgb[y:y + window[1], x:x + window[0]], m))
            n += 1
        res.windows_per_scale[s] = n
    return res


def add_noise(sample: RoadSample, sd: float, rng: np.random.Generator) -> RoadSample:
    """Gaussian noise on the colour channels; index channels and target untouched."""
    if sd < 0:
        raise ValueError("noise sd must be >= 0")
    data = sample.input.data.copy()
    if sd > 0:
        data[:, :, :3] += rng.normal(0.0, sd, size=data[:, :, :3].shape)
    return RoadSample(Tensor3(data), sample.target)


# --------------------------------------------------------------------------
# metrics

def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


@dataclass
class SegMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    pre: float = 0.0
    rec: float = 0.0
    fdr: float = 0.0
    fnr: float = 0.0
    f1: float = 0.0
    accuracy: float = 0.0
    fpr_std: float = 0.0
    degenerate: tuple[str, ...] = ()

    @classmethod
    def from_counts(cls, tp, fp, tn, fn) -> "SegMetrics":
        tp, fp, tn, fn = int(tp), int(fp), int(tn), int(fn)
        flags = []
        vals = {}
        for name, num, den in (("pre", tp, tp + fp), ("rec", tp, tp + fn),
                               ("fdr", fp, tp + fp), ("fnr", fn, tp + fn),
                               ("accuracy", tp + tn, tp + fp + tn + fn), ("fpr_std", fp, fp + tn)):
            vals[name], bad = _ratio(num, den)
            if bad:
                flags.append(name)
        p, r = vals["pre"], vals["rec"]
        if p + r > 0:
            vals["f1"] = 2 * p * r / (p + r)
        else:
            vals["f1"] = 0.0
            flags.append("f1")
        return cls(tp, fp, tn, fn, degenerate=tuple(flags), **vals)

    def __add__(self, other: "SegMetrics") -> "SegMetrics":
        return SegMetrics.from_counts(self.tp + other.tp, self.fp + other.fp,
                                      self.tn + other.tn, self.fn + other.fn)

    def rows(self) -> list[tuple[str, float]]:
        return [("F1", self.f1), ("AP (pixel accuracy)", self.accuracy), ("PRE", self.pre),
                ("REC", self.rec), ("FPR as FP/(TP+FP)", self.fdr),
                ("FPR as FP/(FP+TN)", self.fpr_std), ("FNR", self.fnr)]


def compute_metrics(pred_mask, gt_mask) -> SegMetrics:
    p = _mask2d(pred_mask) > 0.5
    g = _mask2d(gt_mask) > 0.5
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ in size")
    tp = np.count_nonzero(p & g)
    fp = np.count_nonzero(p & ~g)
    fn = np.count_nonzero(~p & g)
    tn = p.size - tp - fp - fn
    return SegMetrics.from_counts(tp, fp, tn, fn)


# --------------------------------------------------------------------------
# image files: 8-bit RGB PNGs, masks single-channel 0/255

def read_rgb(path) -> np.ndarray:
    from PIL import Image
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    from PIL import Image
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def write_rgb(path, rgb: np.ndarray) -> None:
    from PIL import Image
    Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8), "RGB").save(path)


def write_mask(path, mask: np.ndarray) -> None:
    from PIL import Image
    Image.fromarray(np.where(_mask2d(mask) > 0.5, 255, 0).astype(np.uint8), "L").save(path)


def frame_from_arrays(rgb: np.ndarray, mask: np.ndarray | None = None, name: str = "") -> RoadFrame:
    m = None if mask is None else Tensor3(np.asarray(mask, dtype=np.float64)[:, :, None])
    return RoadFrame(Tensor3(rgb), m, name)


def load_dataset(root, require_masks: bool = True) -> list[RoadFrame]:
    """Read ``root/images/*.png`` paired with ``root/masks/*.png`` by file stem."""
    root = Path(root)
    images = sorted((root / "images").glob("*.png"))
    if not images:
        raise FileNotFoundError(f"no images under {root / 'images'}")
    missing = [p.stem for p in images if not (root / "masks" / f"{p.stem}.png").exists()]
    if missing and require_masks:
        raise FileNotFoundError(f"missing masks for: {', '.join(missing)}")
    frames = []
    for p in images:
        mp = root / "masks" / f"{p.stem}.png"
        frames.append(frame_from_arrays(read_rgb(p), read_mask(mp) if mp.exists() else None, p.stem))
    return frames


def save_dataset(frames, root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(frames):
        stem = fr.name or f"{i:06d}"
        write_rgb(root / "images" / f"{stem}.png", fr.rgb.data)
        if fr.mask is not None:
            write_mask(root / "masks" / f"{stem}.png", fr.mask_array())
