"""Bit-exact dataset readers/writers and the end-point-error harness.

Flow goes to Middlebury .flo, float maps (depth/normals) to little-endian
PFM, images and segmentation to PNG with fixed encoder settings, metadata
to versioned JSON.  Every writer is byte-deterministic for a given value.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

FLO_MAGIC = 202021.25
META_SCHEMA = "worldforge-meta/1"
PNG_COMPRESS_LEVEL = 6


class BadMagic(ValueError):
    pass


class BadHeader(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


class ResolutionMismatch(ValueError):
    pass


@dataclass
class FrameMeta:
    frame_number: int
    time: float
    camera_id: str
    intrinsics: np.ndarray          # 3x3 K
    distortion: tuple[float, float, float]  # (k1, k2, chromatic_alpha)
    world_from_camera: np.ndarray   # 4x4 rigid
    projection_model: str
    stereo_baseline: float = 0.0
    lighting: str = "midday"
    weather: str = "clear"
    seed: int = 0
    depth_convention: str = "z"     # "z" or "distance"

    def validate(self) -> None:
        k = np.asarray(self.intrinsics)
        if k.shape != (3, 3) or k[0, 0] <= 0 or k[1, 1] <= 0 \
                or abs(k[1, 0]) > 1e-12 or abs(k[2, 0]) > 1e-12 or abs(k[2, 1]) > 1e-12:
            raise ValueError("K must be upper triangular with positive diagonal")
        m = np.asarray(self.world_from_camera)
        r = m[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise ValueError("camera pose must be rigid with det +1")

    def to_dict(self) -> dict:
        return {
            "schema": META_SCHEMA,
            "frame_number": self.frame_number,
            "time": self.time,
            "camera_id": self.camera_id,
            "K": np.asarray(self.intrinsics).tolist(),
            "distortion": list(self.distortion),
            "world_from_camera": np.asarray(self.world_from_camera).tolist(),
            "projection_model": self.projection_model,
            "stereo_baseline": self.stereo_baseline,
            "lighting": self.lighting,
            "weather": self.weather,
            "seed": self.seed,
            "depth_convention": self.depth_convention,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameMeta":
        return cls(
            frame_number=d["frame_number"], time=d["time"],
            camera_id=d["camera_id"], intrinsics=np.array(d["K"]),
            distortion=tuple(d["distortion"]),
            world_from_camera=np.array(d["world_from_camera"]),
            projection_model=d["projection_model"],
            stereo_baseline=d.get("stereo_baseline", 0.0),
            lighting=d.get("lighting", "midday"),
            weather=d.get("weather", "clear"),
            seed=d.get("seed", 0),
            depth_convention=d.get("depth_convention", "z"),
        )


# ----------------------------------------------------------------------
# Middlebury .flo

def write_flo(flow: np.ndarray, path: str | Path) -> None:
    """Little-endian .flo: magic, int32 w/h, interleaved (u,v) float32."""
    arr = np.asarray(flow, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError("flow must be (h, w, 2)")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", w, h))
        fh.write(arr.astype("<f4").tobytes())


def read_flo(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedFile(f"{path}: too short for a .flo header")
    magic = struct.unpack("<f", data[:4])[0]
    if magic != FLO_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    w, h = struct.unpack("<ii", data[4:12])
    expected = 12 + w * h * 2 * 4
    if len(data) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, got {len(data)}")
    arr = np.frombuffer(data[12:expected], dtype="<f4").reshape(h, w, 2)
    return arr.copy()


# ----------------------------------------------------------------------
# PFM (little-endian, scale -1.0, bottom-up rows)

def write_pfm(data: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError("PFM stores 1- or 3-channel float maps")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].astype("<f4").tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4:
        raise BadHeader(f"{path}: incomplete PFM header")
    kind, dims, scale_s, payload = parts
    if kind not in (b"Pf", b"PF"):
        raise BadHeader(f"{path}: bad PFM type {kind!r}")
    try:
        w, h = (int(v) for v in dims.split())
        scale = float(scale_s)
    except ValueError as exc:
        raise BadHeader(f"{path}: bad PFM dimensions/scale") from exc
    channels = 3 if kind == b"PF" else 1
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    if len(payload) < count * 4:
        raise TruncatedFile(f"{path}: expected {count * 4} payload bytes")
    arr = np.frombuffer(payload[:count * 4], dtype=dtype).reshape(h, w, channels)
    arr = arr[::-1].copy()
    return arr[:, :, 0] if channels == 1 else arr


# ----------------------------------------------------------------------
# PNG

def write_png(array: np.ndarray, path: str | Path) -> None:
    """8-bit gray/RGB/RGBA or 16-bit gray PNG with fixed settings."""
    arr = np.asarray(array)
    if arr.dtype == np.uint8 or arr.dtype == np.uint16:
        im = PILImage.fromarray(arr)
    else:
        raise ValueError("write_png expects uint8 or uint16 arrays")
    im.save(path, format="PNG", compress_level=PNG_COMPRESS_LEVEL)


def read_png(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im).copy()


def float_to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(img) * 255.0 + 0.5, 0.0, 255.0).astype(np.uint8)


def events_to_u8(polarity: np.ndarray) -> np.ndarray:
    """Map polarity {-1, 0, +1} to {0, 128, 255}."""
    pol = np.asarray(polarity)
    out = np.full(pol.shape, 128, dtype=np.uint8)
    out[pol < 0] = 0
    out[pol > 0] = 255
    return out


def u8_to_events(img: np.ndarray) -> np.ndarray:
    out = np.zeros(img.shape, dtype=np.int8)
    out[img < 64] = -1
    out[img > 192] = 1
    return out


# ----------------------------------------------------------------------
# frame bundles

def write_frame_bundle(frame, root_dir: str | Path, scene_id: str) -> list[Path]:
    """Write every present pass of an AnnotationFrame under root/scene_id/.

    Layout: rgb/%06d.png, depth/%06d.pfm, flow/%06d.flo, normal/%06d.pfm,
    seg_instance/%06d.png, seg_semantic/%06d.png, events/%06d.png,
    stereo/%06d.png, meta/%06d.json.  Existing files are overwritten.
    """
    base = Path(root_dir) / scene_id
    idx = frame.meta.frame_number
    name = f"{idx:06d}"
    written: list[Path] = []

    def target(sub: str, suffix: str) -> Path:
        d = base / sub
        d.mkdir(parents=True, exist_ok=True)
        p = d / f"{name}.{suffix}"
        written.append(p)
        return p

    try:
        write_png(float_to_u8(frame.rgb), target("rgb", "png"))
        depth = np.asarray(frame.depth, dtype=np.float32)
        write_pfm(np.where(np.isfinite(depth), depth, 0.0), target("depth", "pfm"))
        write_flo(frame.flow, target("flow", "flo"))
        write_pfm(np.asarray(frame.normals, dtype=np.float32), target("normal", "pfm"))
        inst = np.asarray(frame.instance_seg)
        if inst.max(initial=0) > 65535:
            raise ValueError("instance ids exceed 16-bit PNG range")
        write_png(inst.astype(np.uint16), target("seg_instance", "png"))
        write_png(np.asarray(frame.semantic_seg, dtype=np.uint16),
                  target("seg_semantic", "png"))
        if frame.event_frame is not None:
            write_png(events_to_u8(frame.event_frame.polarity),
                      target("events", "png"))
            sidecar = base / "events" / f"{name}.json"
            sidecar.write_text(json.dumps({
                "tau": frame.event_frame.threshold,
                "sigma": frame.event_frame.noise_sigma,
                "t_start": frame.event_frame.t_start,
                "t_end": frame.event_frame.t_end,
            }, sort_keys=True), encoding="utf-8")
            written.append(sidecar)
        if frame.stereo_right_rgb is not None:
            write_png(float_to_u8(frame.stereo_right_rgb), target("stereo", "png"))
        meta_path = target("meta", "json")
        meta_path.write_text(
            json.dumps(frame.meta.to_dict(), indent=2, sort_keys=True),
            encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed writing frame bundle under {base}: {exc}") from exc
    return written


# ----------------------------------------------------------------------
# end-point error

def epe(pred: np.ndarray, gt: np.ndarray,
        valid_mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean and per-pixel Euclidean end-point error between flow maps."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ResolutionMismatch(f"{p.shape} vs {g.shape}")
    per_pixel = np.linalg.norm(p - g, axis=-1)
    if valid_mask is not None:
        mask = np.asarray(valid_mask, dtype=bool)
        if mask.shape != per_pixel.shape:
            raise ResolutionMismatch("valid mask resolution mismatch")
        mean = float(per_pixel[mask].mean()) if mask.any() else 0.0
    else:
        mean = float(per_pixel.mean())
    return mean, per_pixel
