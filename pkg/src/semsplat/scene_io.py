"""On-disk formats: splat PLY, cameras JSON, label PNGs, PFM maps and CSSD state files.

Conventions used throughout the package:

* Camera axes are x right, y down, z forward. ``camera_to_world`` maps camera
  coordinates to world coordinates.
* Pixel ``(u, v)`` is centred on the continuous image coordinate ``(u, v)``;
  a point on the optical axis lands exactly on ``(cx, cy)``.
* Label value 255 means "ignore".
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    DataError,
    DimensionError,
    EmptySceneError,
    FormatError,
    TruncatedFileError,
)

IGNORE = 255
SH_C0 = 0.2820947918
MIN_SCALE = 1e-12
_OPACITY_EPS = 1e-12

PLY_REQUIRED = (
    "x", "y", "z",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "scale_0", "scale_1", "scale_2",
    "opacity",
    "f_dc_0", "f_dc_1", "f_dc_2",
)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class GaussianCloud:
    """Activated splat parameters. Quaternions are (w, x, y, z)."""

    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    base_colors: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        if n < 1:
            raise EmptySceneError("scene has no gaussians")
        rot = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        norms = np.linalg.norm(rot, axis=1)
        if not np.all(norms > 0):
            raise DataError(f"zero-norm quaternion at index {int(np.argmin(norms))}")
        self.rotations = rot / norms[:, None]
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.base_colors = np.asarray(self.base_colors, dtype=np.float64).reshape(n, 3)
        for name in ("positions", "rotations", "scales", "opacities", "base_colors"):
            arr = getattr(self, name)
            bad = ~np.isfinite(arr.reshape(n, -1)).all(axis=1)
            if bad.any():
                raise DataError(f"non-finite {name} at index {int(np.flatnonzero(bad)[0])}")
        bad = ~(self.scales > MIN_SCALE).all(axis=1)
        if bad.any():
            raise DataError(f"non-positive scale at index {int(np.flatnonzero(bad)[0])}")
        bad = ~((self.opacities > 0) & (self.opacities < 1))
        if bad.any():
            raise DataError(f"opacity outside (0, 1) at index {int(np.flatnonzero(bad)[0])}")

    def __len__(self):
        return len(self.positions)

    def subset(self, index) -> "GaussianCloud":
        return GaussianCloud(
            self.positions[index], self.rotations[index], self.scales[index],
            self.opacities[index], self.base_colors[index],
        )

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "GaussianCloud":
        """Apply the rigid motion ``x -> rotation @ x + translation``."""
        q = _matrix_to_quaternion(rotation)
        return GaussianCloud(
            self.positions @ rotation.T + translation,
            _quaternion_multiply(q, self.rotations),
            self.scales, self.opacities, self.base_colors,
        )


@dataclass
class CameraView:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    camera_to_world: np.ndarray = field(default_factory=lambda: np.eye(4))
    near: float = 0.01
    far: float = 100.0
    label_path: Path | None = None
    image_path: Path | None = None

    def __post_init__(self):
        self.camera_to_world = np.asarray(self.camera_to_world, dtype=np.float64).reshape(4, 4)
        if self.width < 1 or self.height < 1:
            raise DataError("camera width and height must be >= 1")
        if not (0 < self.near < self.far):
            raise DataError("camera requires 0 < near < far")
        rot = self.camera_to_world[:3, :3]
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6 or np.linalg.det(rot) <= 0:
            raise DataError("camera rotation block is not a proper orthonormal matrix")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def world_to_camera(self) -> tuple[np.ndarray, np.ndarray]:
        """Rotation and translation mapping world points into camera space."""
        rot = self.camera_to_world[:3, :3]
        rot_w2c = rot.T
        return rot_w2c, -rot_w2c @ self.camera_to_world[:3, 3]

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraView":
        motion = np.eye(4)
        motion[:3, :3] = rotation
        motion[:3, 3] = translation
        return CameraView(
            self.width, self.height, self.fx, self.fy, self.cx, self.cy,
            motion @ self.camera_to_world, self.near, self.far,
            self.label_path, self.image_path,
        )


@dataclass
class LabelImage:
    category_ids: np.ndarray
    num_classes: int

    def __post_init__(self):
        ids = np.asarray(self.category_ids)
        if ids.ndim != 2:
            raise FormatError("label image must be 2-D")
        bad = (ids != IGNORE) & ((ids < 0) | (ids >= self.num_classes))
        if bad.any():
            v, u = np.argwhere(bad)[0]
            raise DataError(
                f"label {int(ids[v, u])} at pixel ({u}, {v}) out of range for {self.num_classes} classes"
            )
        self.category_ids = ids.astype(np.uint8)

    @property
    def width(self) -> int:
        return self.category_ids.shape[1]

    @property
    def height(self) -> int:
        return self.category_ids.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self.category_ids != IGNORE

    def check_matches(self, cam: CameraView):
        if (self.height, self.width) != (cam.height, cam.width):
            raise DimensionError(
                f"label image is {self.width}x{self.height}, camera is {cam.width}x{cam.height}"
            )

    def check_shape(self, shape):
        if tuple(shape) != self.category_ids.shape:
            raise DimensionError(f"image shape {tuple(shape)} does not match labels {self.category_ids.shape}")


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """(..., 4) unit quaternions (w, x, y, z) to (..., 3, 3) rotation matrices."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def _quaternion_multiply(a, b):
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], -1)


def _matrix_to_quaternion(m):
    from scipy.spatial.transform import Rotation

    x, y, z, w = Rotation.from_matrix(m).as_quat()
    return np.array([w, x, y, z])


# ---------------------------------------------------------------------------
# splat PLY
# ---------------------------------------------------------------------------


def _read_ply_header(f):
    first = f.readline()
    if first.strip() != b"ply":
        raise FormatError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements = []
    while True:
        line = f.readline()
        if not line:
            raise FormatError("PLY header has no end_header")
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "end_header":
            break
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise FormatError("PLY property before any element")
            if tokens[1] == "list":
                elements[-1][2].append((tokens[-1], None))
            else:
                if tokens[1] not in _PLY_TYPES:
                    raise FormatError(f"unsupported PLY property type {tokens[1]!r}")
                elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
    if fmt != "binary_little_endian":
        raise FormatError(f"unsupported PLY format {fmt!r}; expected binary_little_endian")
    return elements


def load_gaussian_ply(path) -> GaussianCloud:
    path = Path(path)
    with open(path, "rb") as f:
        elements = _read_ply_header(f)
        offset = 0
        vertex = None
        for name, count, props in elements:
            if any(t is None for _, t in props):
                if name == "vertex":
                    raise FormatError("list properties on vertex element are not supported")
                if vertex is None:
                    raise FormatError(f"cannot skip list-typed element {name!r} before vertex")
                continue
            dtype = np.dtype([(p, "<" + t) for p, t in props])
            if name == "vertex":
                vertex = (count, dtype, offset)
                break
            offset += count * dtype.itemsize
        if vertex is None:
            raise FormatError("PLY has no vertex element")
        count, dtype, offset = vertex
        for prop in PLY_REQUIRED:
            if prop not in dtype.names:
                raise FormatError(f"PLY is missing required vertex property {prop!r}")
        if count == 0:
            raise EmptySceneError("PLY has zero vertices")
        f.seek(offset, 1)
        raw = f.read(count * dtype.itemsize)
    if len(raw) < count * dtype.itemsize:
        raise TruncatedFileError(f"{path}: PLY vertex data truncated")
    data = np.frombuffer(raw, dtype=dtype, count=count)

    def cols(names):
        return np.stack([data[n].astype(np.float64) for n in names], axis=1)

    stored = cols(PLY_REQUIRED)
    bad = ~np.isfinite(stored).all(axis=1)
    if bad.any():
        raise DataError(f"non-finite value in PLY record {int(np.flatnonzero(bad)[0])}")

    scales = np.exp(cols(["scale_0", "scale_1", "scale_2"]))
    bad = ~(scales > MIN_SCALE).all(axis=1)
    if bad.any():
        raise DataError(f"non-positive activated scale in PLY record {int(np.flatnonzero(bad)[0])}")
    opacity = 1.0 / (1.0 + np.exp(-data["opacity"].astype(np.float64)))
    opacity = np.clip(opacity, _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    colors = np.clip(SH_C0 * cols(["f_dc_0", "f_dc_1", "f_dc_2"]) + 0.5, 0.0, 1.0)
    return GaussianCloud(
        positions=cols(["x", "y", "z"]),
        rotations=cols(["rot_0", "rot_1", "rot_2", "rot_3"]),
        scales=scales,
        opacities=opacity,
        base_colors=colors,
    )


def save_gaussian_ply(cloud: GaussianCloud, path):
    """Write ``cloud`` in pre-activation form (logit opacity, log scale, SH DC color)."""
    props = list(PLY_REQUIRED)
    n = len(cloud)
    data = np.empty(n, dtype=[(p, "<f4") for p in props])
    for i, p in enumerate("xyz"):
        data[p] = cloud.positions[:, i]
    for i in range(4):
        data[f"rot_{i}"] = cloud.rotations[:, i]
    for i in range(3):
        data[f"scale_{i}"] = np.log(cloud.scales[:, i])
        data[f"f_dc_{i}"] = (cloud.base_colors[:, i] - 0.5) / SH_C0
    data["opacity"] = np.log(cloud.opacities / (1.0 - cloud.opacities))
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


# ---------------------------------------------------------------------------
# cameras JSON
# ---------------------------------------------------------------------------

_CAMERA_KEYS = ("w", "h", "fl_x", "fl_y", "cx", "cy", "near", "far", "transform")


def _orthonormalize(transform, index):
    m = np.asarray(transform, dtype=np.float64)
    if m.shape != (16,) or not np.isfinite(m).all():
        raise FormatError(f"camera {index}: transform must be 16 finite numbers")
    m = m.reshape(4, 4)
    if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-9):
        raise DataError(f"camera {index}: transform bottom row must be [0, 0, 0, 1]")
    rot = m[:3, :3]
    if abs(np.linalg.det(rot)) < 1e-9:
        raise DataError(f"camera {index}: pose is not invertible")
    drift = np.abs(rot.T @ rot - np.eye(3)).max()
    if drift >= 1e-3:
        raise DataError(f"camera {index}: rotation drift {drift:.3g} too large to correct")
    u, _, vt = np.linalg.svd(rot)
    fixed = u @ vt
    if np.linalg.det(fixed) < 0:
        raise DataError(f"camera {index}: rotation block is a reflection")
    m = m.copy()
    m[:3, :3] = fixed
    return m


def load_cameras(path) -> list[CameraView]:
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(entries, list):
        raise FormatError(f"{path}: expected a top-level list of cameras")
    cams = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict):
            raise FormatError(f"camera {i}: expected an object")
        for key in _CAMERA_KEYS:
            if key not in e:
                raise FormatError(f"camera {i}: missing key {key!r}")
        try:
            cams.append(CameraView(
                width=int(e["w"]), height=int(e["h"]),
                fx=float(e["fl_x"]), fy=float(e["fl_y"]),
                cx=float(e["cx"]), cy=float(e["cy"]),
                camera_to_world=_orthonormalize(e["transform"], i),
                near=float(e["near"]), far=float(e["far"]),
                label_path=path.parent / e["label_path"] if e.get("label_path") else None,
                image_path=path.parent / e["image_path"] if e.get("image_path") else None,
            ))
        except DataError as err:
            if str(err).startswith("camera "):
                raise
            raise DataError(f"camera {i}: {err}") from None
    return cams


def save_cameras(cams, path):
    path = Path(path)
    out = []
    for cam in cams:
        entry = {
            "w": cam.width, "h": cam.height,
            "fl_x": cam.fx, "fl_y": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "near": cam.near, "far": cam.far,
            "transform": [float(v) for v in cam.camera_to_world.reshape(-1)],
        }
        for key in ("label_path", "image_path"):
            p = getattr(cam, key)
            if p is not None:
                p = Path(p)
                entry[key] = (p.relative_to(path.parent) if p.is_absolute() else p).as_posix()
        out.append(entry)
    path.write_text(json.dumps(out, indent=1), encoding="utf-8")


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def load_label_image(path, num_classes: int) -> LabelImage:
    with Image.open(path) as img:
        if img.mode not in ("L", "P"):
            raise FormatError(f"{path}: label image must be 8-bit single channel, got mode {img.mode}")
        ids = np.array(img, dtype=np.uint8)
    return LabelImage(ids, num_classes)


def load_mask(path) -> np.ndarray:
    """8-bit single-channel PNG; nonzero pixels are kept."""
    with Image.open(path) as img:
        if img.mode not in ("L", "P", "1"):
            raise FormatError(f"{path}: mask must be single channel, got mode {img.mode}")
        return np.array(img.convert("L")) > 0


def save_label_image(labels, path):
    ids = labels.category_ids if isinstance(labels, LabelImage) else np.asarray(labels)
    Image.fromarray(ids.astype(np.uint8), mode="L").save(path)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_rgb_png(image: np.ndarray, path):
    Image.fromarray(to_uint8(image), mode="RGB").save(path)


def load_rgb_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_pfm(path, image: np.ndarray):
    """Little-endian PFM (scale -1.0). 2-D arrays become ``Pf``, H x W x 3 become ``PF``."""
    image = np.asarray(image, dtype="<f4")
    if image.ndim == 2:
        tag = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        tag = b"PF"
    else:
        raise DimensionError("PFM holds 1 or 3 channels")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.ascontiguousarray(image[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"Pf", b"PF"):
            raise FormatError(f"{path}: not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        channels = 3 if tag == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != w * h * channels:
        raise TruncatedFileError(f"{path}: PFM payload truncated")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


# ---------------------------------------------------------------------------
# CSSD semantic state
# ---------------------------------------------------------------------------

STATE_MAGIC = b"CSSD"
STATE_VERSION = 1
_STATE_HEADER = struct.Struct("<4sIQId")


def save_semantic_state(state, path):
    conc = np.asarray(state.concentrations, dtype=np.float64)
    if conc.ndim != 2 or conc.shape[0] == 0:
        raise DimensionError("cannot save a state with zero gaussians")
    n, c = conc.shape
    background = np.asarray(state.background, dtype=np.float64)
    if background.shape != (c,):
        raise DimensionError("background vector length must equal num_classes")
    if not (np.isfinite(conc).all() and np.isfinite(background).all()):
        raise DataError("state holds non-finite concentrations")
    if (conc < state.prior_value).any():
        raise DataError("state holds concentrations below the prior floor")
    with open(path, "wb") as f:
        f.write(_STATE_HEADER.pack(STATE_MAGIC, STATE_VERSION, n, c, float(state.prior_value)))
        f.write(background.astype("<f8").tobytes())
        f.write(np.ascontiguousarray(conc, dtype="<f8").tobytes())


def load_semantic_state(path):
    from .semantic_fusion import SemanticState

    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != STATE_MAGIC:
        raise FormatError(f"{path}: bad magic, not a CSSD state file")
    if len(raw) < _STATE_HEADER.size:
        raise TruncatedFileError(f"{path}: truncated header")
    _, version, n, c, prior = _STATE_HEADER.unpack_from(raw)
    if version != STATE_VERSION:
        raise FormatError(f"{path}: unsupported CSSD version {version}")
    expected = _STATE_HEADER.size + 8 * c * (n + 1)
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: truncated payload")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes")
    body = np.frombuffer(raw, dtype="<f8", offset=_STATE_HEADER.size)
    background = body[:c].astype(np.float64)
    conc = body[c:].reshape(n, c).astype(np.float64)
    return SemanticState(conc, prior, background)
