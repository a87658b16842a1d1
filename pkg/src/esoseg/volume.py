"""Volumetric data type and MetaImage-style file I/O.

A Volume3D is an immutable scalar grid with voxel spacing in millimetres.
Data is kept as float64 in memory; the on-disk element type is determined
by the volume kind (HU -> int16, probability -> float32, mask -> uint8).
Raw payloads are little-endian, x-fastest.
"""

import os

import numpy as np

KIND_HU = "HU"
KIND_PROBABILITY = "probability"
KIND_MASK = "mask"

_KINDS = (KIND_HU, KIND_PROBABILITY, KIND_MASK)

_KIND_TO_MET = {
    KIND_HU: "MET_SHORT",
    KIND_PROBABILITY: "MET_FLOAT",
    KIND_MASK: "MET_UCHAR",
}
_MET_TO_KIND = {v: k for k, v in _KIND_TO_MET.items()}
_MET_DTYPE = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_UCHAR": np.dtype("u1"),
}


class VolumeError(Exception):
    """Raised on invalid volume construction or malformed volume files."""


class Volume3D:
    """Immutable 3D scalar grid.

    data is indexed [x, y, z]; spacing is (sx, sy, sz) in mm.
    """

    __slots__ = ("data", "spacing", "kind")

    def __init__(self, data, spacing, kind):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 3:
            raise VolumeError("volume data must be 3-dimensional")
        spacing = tuple(float(s) for s in spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise VolumeError("spacing must be three strictly positive values")
        if kind not in _KINDS:
            raise VolumeError("unknown volume kind: %r" % (kind,))
        if not np.all(np.isfinite(arr)):
            raise VolumeError("volume data must be finite")
        if kind == KIND_PROBABILITY and (arr.min() < 0.0 or arr.max() > 1.0):
            raise VolumeError("probability volume values must lie in [0, 1]")
        if kind == KIND_MASK and not np.all((arr == 0.0) | (arr == 1.0)):
            raise VolumeError("mask volume values must be 0 or 1")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "kind", kind)

    def __setattr__(self, name, value):
        raise AttributeError("Volume3D is immutable")

    @property
    def dims(self):
        return self.data.shape

    def with_data(self, data, kind=None):
        return Volume3D(data, self.spacing, self.kind if kind is None else kind)

    def __eq__(self, other):
        if not isinstance(other, Volume3D):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.spacing == other.spacing
            and self.dims == other.dims
            and np.array_equal(self.data, other.data)
        )


def _parse_header(path):
    keys = {}
    with open(path, "r") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise VolumeError("malformed header line: %r" % line)
            key, val = line.split("=", 1)
            keys[key.strip()] = val.strip()
    return keys


def read_volume(path):
    """Read a header/raw volume file pair into a Volume3D."""
    if not os.path.isfile(path):
        raise VolumeError("no such volume file: %s" % path)
    keys = _parse_header(path)
    try:
        if int(keys["NDims"]) != 3:
            raise VolumeError("only 3D volumes are supported")
        dims = tuple(int(t) for t in keys["DimSize"].split())
        spacing = tuple(float(t) for t in keys["ElementSpacing"].split())
        met = keys["ElementType"]
        datafile = keys["ElementDataFile"]
    except KeyError as exc:
        raise VolumeError("missing header key: %s" % exc) from exc
    except ValueError as exc:
        raise VolumeError("malformed header value: %s" % exc) from exc
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise VolumeError("DimSize must be three positive integers")
    if keys.get("ElementByteOrderMSB", "False") != "False":
        raise VolumeError("big-endian payloads are not supported")
    if met not in _MET_DTYPE:
        raise VolumeError("unsupported element type: %s" % met)
    raw_path = os.path.join(os.path.dirname(path), datafile)
    if not os.path.isfile(raw_path):
        raise VolumeError("missing raw payload: %s" % raw_path)
    dtype = _MET_DTYPE[met]
    buf = np.fromfile(raw_path, dtype=dtype)
    n = dims[0] * dims[1] * dims[2]
    if buf.size != n:
        raise VolumeError(
            "payload size mismatch: %d elements for dims %s" % (buf.size, (dims,))
        )
    arr = buf.reshape(dims, order="F")
    return Volume3D(arr, spacing, _MET_TO_KIND[met])


def write_volume(vol, path):
    """Write a Volume3D as a header/raw pair; round-trips through read_volume.

    HU data is rounded to the nearest int16 on disk, so the round-trip is
    lossless only for integral HU values (all volumes produced by this
    package satisfy that).
    """
    met = _KIND_TO_MET[vol.kind]
    dtype = _MET_DTYPE[met]
    if vol.kind == KIND_HU:
        rounded = np.rint(vol.data)
        if rounded.min() < -32768 or rounded.max() > 32767:
            raise VolumeError("HU values out of int16 range")
        payload = rounded.astype(dtype)
    else:
        payload = vol.data.astype(dtype)
    base, _ = os.path.splitext(path)
    raw_name = os.path.basename(base) + ".raw"
    raw_path = os.path.join(os.path.dirname(path), raw_name)
    header = (
        "NDims = 3\n"
        "DimSize = %d %d %d\n" % vol.dims
        + "ElementSpacing = %.9g %.9g %.9g\n" % vol.spacing
        + "ElementType = %s\n" % met
        + "ElementByteOrderMSB = False\n"
        + "ElementDataFile = %s\n" % raw_name
    )
    try:
        with open(path, "w") as fh:
            fh.write(header)
        payload.ravel(order="F").tofile(raw_path)
    except OSError as exc:
        raise VolumeError("cannot write volume: %s" % exc) from exc


def _reflect_index(i, n):
    """Fold index i into [0, n-1] by mirror reflection (no edge repeat)."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    if i < 0:
        i += period
    return i if i < n else period - i


def reflect_indices(start, size, n):
    """Mirror-reflected source indices for a window [start, start+size)."""
    return np.array([_reflect_index(start + k, n) for k in range(size)], dtype=np.intp)


def extract_region(data, start, size):
    """Extract a box with mirror reflection at the boundaries.

    data is any 3D array; start may be negative and start+size may exceed
    the array bounds.
    """
    ix = reflect_indices(start[0], size[0], data.shape[0])
    iy = reflect_indices(start[1], size[1], data.shape[1])
    iz = reflect_indices(start[2], size[2], data.shape[2])
    return data[np.ix_(ix, iy, iz)]


def extract_subvolume(vol, center, size):
    """Extract an odd-sized sub-volume centered on a voxel, mirror-padded."""
    size = tuple(int(s) for s in size)
    if any(s < 1 or s % 2 == 0 for s in size):
        raise VolumeError("sub-volume size components must be odd, got %s" % (size,))
    start = tuple(int(c) - s // 2 for c, s in zip(center, size))
    out = extract_region(vol.data, start, size)
    return Volume3D(out, vol.spacing, vol.kind)


def downsample2(vol):
    """Down-sample by 2 along every axis: 2x2x2 block mean, spacing doubled."""
    nx, ny, nz = vol.dims
    if min(nx, ny, nz) < 2:
        raise VolumeError("downsample2 requires every dim >= 2")
    out = block_mean2(vol.data)
    spacing = tuple(2.0 * s for s in vol.spacing)
    kind = vol.kind if vol.kind != KIND_MASK else KIND_PROBABILITY
    return Volume3D(out, spacing, kind)


def block_mean2(data):
    """2x2x2 block mean of a 3D array; trailing odd slabs are dropped."""
    nx, ny, nz = data.shape
    mx, my, mz = nx // 2, ny // 2, nz // 2
    d = data[: 2 * mx, : 2 * my, : 2 * mz]
    return d.reshape(mx, 2, my, 2, mz, 2).mean(axis=(1, 3, 5))


def upsample2_nearest(vol, target_dims):
    """Nearest-neighbor x2 up-sampling followed by a center crop."""
    out = nearest_upsample2(vol.data, target_dims)
    spacing = tuple(s / 2.0 for s in vol.spacing)
    return Volume3D(out, spacing, vol.kind)


def nearest_upsample2(data, target_dims):
    """x2 voxel repetition of a 3D array, center-cropped to target_dims."""
    target_dims = tuple(int(t) for t in target_dims)
    for t, d in zip(target_dims, data.shape):
        if not (2 * d - 1 <= t <= 2 * d):
            raise VolumeError(
                "target dim %d out of range [%d, %d]" % (t, 2 * d - 1, 2 * d)
            )
    up = data.repeat(2, axis=0).repeat(2, axis=1).repeat(2, axis=2)
    off = tuple((2 * d - t) // 2 for d, t in zip(data.shape, target_dims))
    return up[
        off[0] : off[0] + target_dims[0],
        off[1] : off[1] + target_dims[1],
        off[2] : off[2] + target_dims[2],
    ]
