"""Forward warping of a color image into a new camera through its point cloud.

Each visible point scatters its color to the four integer pixels around its
continuous projection, one intermediate buffer per candidate
(ceil/ceil, ceil/floor, floor/ceil, floor/floor). Points are written far to
near so nearer surfaces overwrite farther ones. The buffers are then merged
with distance-based weights and remaining holes are filled from the nearest
filled pixels.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from exaug.cloud import DepthMap, PointCloud, depth_to_cloud, transform_cloud
from exaug.errors import EmptySynthesisError, FormatError, ShapeError
from exaug.geometry import CameraModel, Transform3D, project_points

# candidate order: (u rounding, v rounding) for buffers 1..4
CANDIDATES = ((np.ceil, np.ceil), (np.ceil, np.floor), (np.floor, np.ceil), (np.floor, np.floor))


@dataclass(frozen=True, eq=False)
class ColorImage:
    rgb: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[0] < 1 or rgb.shape[1] < 1:
            raise ShapeError(f"expected an (H, W, 3) raster, got {rgb.shape}")
        object.__setattr__(self, "rgb", rgb.astype(np.uint8))

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+"
                         rb"(?:#[^\n]*\n\s*)*(\d+)\s")


def read_ppm(path) -> ColorImage:
    data = Path(path).read_bytes()
    m = _PPM_HEADER.match(data)
    if not m:
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = data[m.end():m.end() + width * height * 3]
    if len(body) != width * height * 3:
        raise FormatError(f"{path}: truncated pixel data")
    return ColorImage(np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3))


def write_ppm(path, image: ColorImage) -> None:
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (image.width, image.height))
        fh.write(np.ascontiguousarray(image.rgb).tobytes())


@dataclass(frozen=True, eq=False)
class SplatBuffer:
    """Four intermediate images with per-pixel weight and writer depth.

    Arrays are stacked on the leading axis: ``color`` (4, H, W, 3),
    ``weight`` (4, H, W), ``depth`` (4, H, W) and ``written`` (4, H, W).
    """

    color: np.ndarray
    weight: np.ndarray
    depth: np.ndarray
    written: np.ndarray


def candidate_weights(uv: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer candidates and merge weights for continuous projections.

    Returns ``(cu, cv, w)`` each of shape (4, N). A candidate's weight is
    ``(sum(l) - l_k) / sum(l)`` with ``l_k`` its distance to the projection;
    when the projection sits exactly on a pixel all four distances vanish
    and every candidate gets weight 1.
    """
    u, v = uv[:, 0], uv[:, 1]
    cu = np.stack([fu(u) for fu, _ in CANDIDATES])
    cv = np.stack([fv(v) for _, fv in CANDIDATES])
    lengths = np.hypot(cu - u, cv - v)
    total = lengths.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(total > 0, (total - lengths) / total, 1.0)
    return cu.astype(np.int64), cv.astype(np.int64), w


def painter_order(depth: np.ndarray) -> np.ndarray:
    """Processing order: decreasing depth, ties in original (raster) order."""
    return np.lexsort((np.arange(depth.size), -depth))


def splat(source: ColorImage, cloud_t: PointCloud, target: CameraModel) -> SplatBuffer:
    """Scatter ``source`` colors through points expressed in the target camera frame."""
    if cloud_t.shape != (source.height, source.width):
        raise ShapeError(
            f"cloud raster {cloud_t.shape} does not match image "
            f"{(source.height, source.width)}"
        )
    h, w = target.height, target.width
    color = np.zeros((4, h, w, 3), dtype=np.uint8)
    weight = np.zeros((4, h, w))
    depth_rec = np.full((4, h, w), np.inf)
    written = np.zeros((4, h, w), dtype=bool)

    pts = cloud_t.points[cloud_t.valid]
    cols = source.rgb[cloud_t.valid]
    uv, ok = project_points(target, pts)
    pts, cols, uv = pts[ok], cols[ok], uv[ok]
    if len(pts) == 0:
        return SplatBuffer(color, weight, depth_rec, written)

    rng = np.linalg.norm(pts, axis=1)
    order = painter_order(rng)
    uv, cols, rng = uv[order], cols[order], rng[order]
    cu, cv, wts = candidate_weights(uv)
    position = np.arange(len(rng))
    for k in range(4):
        flat = cv[k] * w + cu[k]
        # the last writer in painter's order wins each pixel
        winner = np.full(h * w, -1)
        np.maximum.at(winner, flat, position)
        hit = winner >= 0
        src = winner[hit]
        color[k].reshape(-1, 3)[hit] = cols[src]
        weight[k].reshape(-1)[hit] = wts[k, src]
        depth_rec[k].reshape(-1)[hit] = rng[src]
        written[k].reshape(-1)[hit] = True
    return SplatBuffer(color, weight, depth_rec, written)


def merge_float(buffer: SplatBuffer) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean of the written candidates, as floats, plus the filled mask."""
    wts = np.where(buffer.written, buffer.weight, 0.0)
    norm = wts.sum(axis=0)
    acc = (wts[..., None] * buffer.color.astype(float)).sum(axis=0)
    filled = norm > 0
    out = np.zeros(acc.shape)
    out[filled] = acc[filled] / norm[filled][:, None]
    return out, filled


def to_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def merge(buffer: SplatBuffer) -> tuple[ColorImage, np.ndarray]:
    merged, filled = merge_float(buffer)
    return ColorImage(to_u8(merged)), filled


def _nearest_along_axis(filled: np.ndarray, axis: int, reverse: bool):
    """Index of the nearest filled pixel before each pixel along one axis (-1 if none)."""
    f = np.flip(filled, axis=axis) if reverse else filled
    n = f.shape[axis]
    idx = np.arange(n).reshape((-1, 1) if axis == 0 else (1, -1))
    marks = np.where(f, idx, -1)
    last = np.maximum.accumulate(marks, axis=axis)
    # exclude the pixel itself: shift by one
    prev = np.full_like(last, -1)
    if axis == 0:
        prev[1:] = last[:-1]
    else:
        prev[:, 1:] = last[:, :-1]
    if reverse:
        prev = np.where(prev >= 0, n - 1 - prev, -1)
        prev = np.flip(prev, axis=axis)
    return prev


def fill_blanks(image: ColorImage, filled: np.ndarray) -> ColorImage:
    """Fill unfilled pixels from their nearest filled pixel in each of the
    four axis directions, weighted like the merge step."""
    filled = np.asarray(filled, dtype=bool)
    if filled.shape != (image.height, image.width):
        raise ShapeError("filled mask does not match image")
    if not filled.any():
        raise EmptySynthesisError("no filled pixel to interpolate from")
    if filled.all():
        return ColorImage(image.rgb.copy())

    rgb = image.rgb.astype(float)
    h, w = filled.shape
    vv, uu = np.mgrid[0:h, 0:w]
    sources = []  # (v index, u index, distance) per direction
    for axis in (0, 1):
        for reverse in (False, True):
            near = _nearest_along_axis(filled, axis, reverse)
            if axis == 0:
                sv, su = near, uu
                dist = np.abs(near - vv).astype(float)
            else:
                sv, su = vv, near
                dist = np.abs(near - uu).astype(float)
            sources.append((sv, su, near >= 0, dist))

    present = np.stack([s[2] for s in sources])
    lengths = np.stack([np.where(s[2], s[3], 0.0) for s in sources])
    total = lengths.sum(axis=0)
    count = present.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        wts = np.where(present, (total - lengths) / total, 0.0)
    # a single available neighbor is copied outright
    wts = np.where((count == 1)[None], present.astype(float), wts)

    out = rgb.copy()
    acc = np.zeros_like(rgb)
    for k, (sv, su, ok, _) in enumerate(sources):
        colors = rgb[np.where(ok, sv, 0), np.where(ok, su, 0)]
        acc += wts[k][..., None] * colors
    norm = wts.sum(axis=0)
    target = ~filled & (norm > 0)
    out[target] = acc[target] / norm[target][:, None]

    orphan = ~filled & (norm <= 0)
    if orphan.any():
        _, (iv, iu) = ndimage.distance_transform_edt(~filled, return_indices=True)
        out[orphan] = rgb[iv[orphan], iu[orphan]]
    return ColorImage(to_u8(out))


def resample_bilinear(image: ColorImage, width: int, height: int) -> ColorImage:
    if (width, height) == (image.width, image.height):
        return ColorImage(image.rgb.copy())
    v = (np.arange(height) + 0.5) * image.height / height - 0.5
    u = (np.arange(width) + 0.5) * image.width / width - 0.5
    vv, uu = np.meshgrid(v, u, indexing="ij")
    chans = [
        ndimage.map_coordinates(image.rgb[..., c].astype(float), [vv, uu], order=1, mode="nearest")
        for c in range(3)
    ]
    return ColorImage(to_u8(np.stack(chans, axis=-1)))


def synthesize_view(source_img: ColorImage, source_depth: DepthMap,
                    source_cam: CameraModel, target_cam: CameraModel,
                    t_st: Transform3D, working_scale: float = 1.0,
                    return_mask: bool = False):
    """Render what ``target_cam`` would see, from a source image and its depth.

    ``t_st`` maps source-camera coordinates to target-camera coordinates.
    Splatting happens on a raster ``working_scale`` times the target size,
    bilinearly resampled to the target resolution at the end.
    """
    cloud = depth_to_cloud(source_cam, source_depth)
    cloud_t = transform_cloud(cloud, t_st, frame="target")
    work_w = max(2, int(round(target_cam.width * working_scale)))
    work_h = max(2, int(round(target_cam.height * working_scale)))
    work_cam = target_cam.scaled(work_w, work_h)
    buffer = splat(source_img, cloud_t, work_cam)
    merged, filled = merge(buffer)
    image = fill_blanks(merged, filled)
    image = resample_bilinear(image, target_cam.width, target_cam.height)
    if return_mask:
        if (work_w, work_h) != (target_cam.width, target_cam.height):
            zoom = (target_cam.height / work_h, target_cam.width / work_w)
            filled = ndimage.zoom(filled.astype(float), zoom, order=0) > 0.5
        return image, filled
    return image
