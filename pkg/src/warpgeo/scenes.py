"""Procedural multi-frame scenes with exact ground truth.

The background is a set of planar patches painted with an analytic texture
defined in frame-0 image coordinates: a world point ``X`` has intensity
``texture(project_0(X))``. Every frame is rendered by ray casting each pixel
center, so corresponding pixels in two frames look up the texture at the same
point and static regions are photometrically exact. Moving objects live in
image space: a textured rectangle translated by a constant velocity per
frame, drawn on top of the background at a fixed depth.
"""

import configparser
import io
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import FormatError, InvalidSpecError
from .fileio import read_flo, read_image, read_pfm, read_pnm, read_poses, write_flo, write_pfm, write_pnm, write_poses
from .geometry import Z_MIN, CameraIntrinsics, PoseSE3, project, rigid_flow, rigid_flow_rt, rotation_to_euler
from .grids import pixel_grid

LAYOUTS = ("fronto_plane", "slanted_plane", "two_layer")
MIN_PERIOD = 4.0
# components closer than this to an image axis count as axis-aligned
AXIS_TOL_RAD = np.deg2rad(10.0)


@dataclass(frozen=True)
class Sinusoid:
    """``amplitude * sin(2 pi (kx u + ky v) + phase_c)`` with one phase per channel."""

    amplitude: float
    kx: float
    ky: float
    phases: tuple

    @property
    def period(self):
        return 1.0 / float(np.hypot(self.kx, self.ky))


@dataclass(frozen=True)
class TextureSpec:
    """Random texture parameters, or an explicit list of sinusoids."""

    components: int = 6
    period_min: float = 8.0
    period_max: float = 32.0
    amplitude: float = 0.4
    sinusoids: tuple = ()
    offset: float = 0.5


@dataclass(frozen=True)
class LayoutSpec:
    """Background geometry in frame-0 camera coordinates.

    ``slope = (sx, sy)`` tilts the plane to ``Z = depth + sx X + sy Y``.
    ``two_layer`` adds a fronto-parallel patch at ``near_depth`` whose extent
    is the frame-0 image rectangle ``near_rect = (x, y, w, h)``.
    """

    kind: str = "slanted_plane"
    depth: float = 10.0
    slope: tuple = (0.0, 0.0)
    near_depth: float = 6.0
    near_rect: tuple = (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class MovingObject:
    """Image-space rectangle ``(x, y, w, h)`` at frame 0 moving ``velocity`` px/frame."""

    rect: tuple
    velocity: tuple
    depth: float = None
    texture: TextureSpec = TextureSpec(components=4, period_min=6.0, period_max=16.0)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 96
    height: int = 64
    channels: int = 3
    num_frames: int = 2
    intrinsics: CameraIntrinsics = None
    layout: LayoutSpec = LayoutSpec()
    texture: TextureSpec = TextureSpec()
    # T_{0->k}: maps frame-0 camera coordinates into frame k
    poses: tuple = ()
    objects: tuple = ()
    seed: int = 0


@dataclass
class PairTruth:
    """Ground truth for frames ``(target, source)`` in both directions."""

    target: int
    source: int
    pose: PoseSE3
    rigid_fwd: np.ndarray
    residual_fwd: np.ndarray
    full_fwd: np.ndarray
    occlusion_fwd: np.ndarray
    rigid_bwd: np.ndarray
    residual_bwd: np.ndarray
    full_bwd: np.ndarray
    occlusion_bwd: np.ndarray


@dataclass
class Scene:
    spec: SceneSpec
    frames: list
    gt_depth: list
    labels: list  # per frame: -1 background, otherwise object index
    pairs: list = field(default_factory=list)

    @property
    def intrinsics(self):
        return self.spec.intrinsics

    @property
    def gt_pose(self):
        return [p.pose for p in self.pairs]

    @property
    def gt_rigid_flow(self):
        return [p.rigid_fwd for p in self.pairs]

    @property
    def gt_residual_flow(self):
        return [p.residual_fwd for p in self.pairs]

    @property
    def gt_full_flow(self):
        return [p.full_fwd for p in self.pairs]

    @property
    def gt_occlusion(self):
        return [p.occlusion_fwd for p in self.pairs]


# --------------------------------------------------------------------------
# spec resolution and validation


def _random_texture(rng, tex, channels):
    n = tex.components
    periods = np.exp(rng.uniform(np.log(tex.period_min), np.log(tex.period_max), n))
    # orientation kept away from both image axes
    theta = rng.uniform(AXIS_TOL_RAD, np.pi / 2 - AXIS_TOL_RAD, n)
    theta = theta + np.pi / 2 * rng.integers(0, 2, n)
    weights = rng.uniform(0.5, 1.0, n)
    amps = tex.amplitude * weights / weights.sum()
    phases = rng.uniform(0, 2 * np.pi, (n, channels))
    return tuple(
        Sinusoid(
            float(amps[i]),
            float(np.cos(theta[i]) / periods[i]),
            float(np.sin(theta[i]) / periods[i]),
            tuple(float(p) for p in phases[i]),
        )
        for i in range(n)
    )


def default_intrinsics(width, height):
    return CameraIntrinsics(100.0, 100.0, (width - 1) / 2.0, (height - 1) / 2.0)


def resolve_spec(spec):
    """Fill every defaulted field so the scene spec fully determines the scene.

    Random textures are drawn from ``spec.seed`` (background first, then the
    objects in order). Already explicit sinusoids are kept.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.intrinsics or default_intrinsics(spec.width, spec.height)
    tex = spec.texture
    if not tex.sinusoids:
        tex = replace(tex, sinusoids=_random_texture(rng, tex, spec.channels))
    poses = tuple(spec.poses) or tuple(PoseSE3() for _ in range(spec.num_frames))
    objects = []
    for obj in spec.objects:
        otex = obj.texture
        if not otex.sinusoids:
            otex = replace(otex, sinusoids=_random_texture(rng, otex, spec.channels))
        depth = obj.depth if obj.depth is not None else 0.6 * spec.layout.depth
        objects.append(replace(obj, texture=otex, depth=float(depth)))
    out = replace(spec, intrinsics=k, texture=tex, poses=poses, objects=tuple(objects))
    validate_spec(out)
    return out


def _check_texture(tex, channels, prefix):
    if len(tex.sinusoids) < 3:
        raise InvalidSpecError(f"{prefix}: a texture needs at least 3 sinusoids", prefix)
    total = 0.0
    for i, s in enumerate(tex.sinusoids):
        name = f"{prefix}.sinusoid.{i}"
        if len(s.phases) != channels:
            raise InvalidSpecError(f"{name}: needs {channels} phases", name)
        if s.kx == 0 or s.ky == 0:
            raise InvalidSpecError(f"{name}: sinusoid must not be axis-aligned", name)
        if s.period < MIN_PERIOD:
            raise InvalidSpecError(f"{name}: period {s.period:.3g} px is below {MIN_PERIOD}", name)
        if s.amplitude < 0:
            raise InvalidSpecError(f"{name}: amplitude must be non-negative", name)
        total += s.amplitude
    lo, hi = tex.offset - total, tex.offset + total
    if lo < -1e-12 or hi > 1 + 1e-12:
        raise InvalidSpecError(
            f"{prefix}: offset {tex.offset:g} with amplitude sum {total:.3g} leaves [0, 1]", f"{prefix}.offset"
        )


def validate_spec(spec):
    """Raise :class:`InvalidSpecError` naming the first offending field."""
    if spec.width < 2 or spec.height < 2:
        raise InvalidSpecError("image must be at least 2x2", "scene.width")
    if spec.channels not in (1, 3):
        raise InvalidSpecError("channels must be 1 or 3", "scene.channels")
    if spec.num_frames < 2:
        raise InvalidSpecError("need at least two frames", "scene.num_frames")
    if len(spec.poses) != spec.num_frames:
        raise InvalidSpecError(
            f"{len(spec.poses)} poses given for {spec.num_frames} frames", "pose"
        )
    lay = spec.layout
    if lay.kind not in LAYOUTS:
        raise InvalidSpecError(f"layout.kind must be one of {LAYOUTS}", "layout.kind")
    if not lay.depth > 0:
        raise InvalidSpecError("layout depth must be positive", "layout.depth")
    if lay.kind == "fronto_plane" and any(lay.slope):
        raise InvalidSpecError("a fronto-parallel plane has zero slope", "layout.slope")
    if lay.kind == "two_layer":
        x, y, w, h = lay.near_rect
        if w <= 0 or h <= 0:
            raise InvalidSpecError("near layer rectangle is empty", "layout.near_rect")
        if not 0 < lay.near_depth < lay.depth:
            raise InvalidSpecError("near layer must lie in front of the far plane", "layout.near_depth")
    _check_texture(spec.texture, spec.channels, "texture")
    for i, obj in enumerate(spec.objects):
        x, y, w, h = obj.rect
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > spec.width or y + h > spec.height:
            raise InvalidSpecError(
                f"object.{i}.rect {obj.rect} is not inside the {spec.width}x{spec.height} image",
                f"object.{i}.rect",
            )
        if obj.depth is not None and not obj.depth > 0:
            raise InvalidSpecError("object depth must be positive", f"object.{i}.depth")
        _check_texture(obj.texture, spec.channels, f"object.{i}")


# --------------------------------------------------------------------------
# rendering


def evaluate_texture(sinusoids, u, v, offset=0.5):
    """Texture value at coordinates ``(u, v)``; returns ``u.shape + (C,)``."""
    u = np.asarray(u, dtype=np.float64)[..., None]
    v = np.asarray(v, dtype=np.float64)[..., None]
    out = offset
    for s in sinusoids:
        out = out + s.amplitude * np.sin(2 * np.pi * (s.kx * u + s.ky * v) + np.asarray(s.phases))
    return out * np.ones(u.shape[:-1] + (len(sinusoids[0].phases),))


class SceneRenderer:
    """Continuous rendering of a resolved :class:`SceneSpec`."""

    def __init__(self, spec):
        self.spec = spec
        self.K = spec.intrinsics
        self.Rs = [p.R for p in spec.poses]
        self.ts = [p.t for p in spec.poses]
        lay = spec.layout
        sx, sy = lay.slope
        self.patches = [(np.array([-sx, -sy, 1.0]), lay.depth, None, 0)]
        if lay.kind == "two_layer":
            self.patches.append((np.array([0.0, 0.0, 1.0]), lay.near_depth, lay.near_rect, 1))
        self._near_tex = tuple(
            replace(s, phases=tuple(p + np.pi for p in s.phases)) for s in spec.texture.sinusoids
        )

    def relative_pose(self, t, s):
        """``(R, t)`` of ``T_{t->s}``."""
        R = self.Rs[s] @ self.Rs[t].T
        return R, self.ts[s] - R @ self.ts[t]

    def to_world(self, k, X):
        return (X - self.ts[k]) @ self.Rs[k]

    def from_world(self, k, Xw):
        return Xw @ self.Rs[k].T + self.ts[k]

    def background(self, k, x, y):
        """Ray cast the layout from frame ``k`` at pixel coordinates ``(x, y)``.

        Returns ``(depth_k, world_points, patch_id)``.
        """
        K = self.K
        rays = np.stack([(x - K.cx) / K.fx, (y - K.cy) / K.fy, np.ones_like(x)], axis=-1)
        origin = -self.Rs[k].T @ self.ts[k]
        dirs = rays @ self.Rs[k]
        best = np.full(x.shape, np.inf)
        pid = np.full(x.shape, -1, dtype=np.int64)
        for n, c, rect, idx in self.patches:
            denom = dirs @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                mu = (c - n @ origin) / denom
            ok = np.isfinite(mu) & (mu > Z_MIN)
            if rect is not None:
                Xw = origin + mu[..., None] * dirs
                uv, front = project(Xw, K)
                # points on the rectangle edge must land on the same side from every frame
                uv = np.round(uv, 9)
                rx, ry, rw, rh = rect
                ok &= front & (uv[..., 0] >= rx) & (uv[..., 0] < rx + rw)
                ok &= (uv[..., 1] >= ry) & (uv[..., 1] < ry + rh)
            closer = ok & (mu < best)
            best = np.where(closer, mu, best)
            pid = np.where(closer, idx, pid)
        if np.any(pid < 0):
            raise InvalidSpecError(f"frame {k}: some pixels see no surface", "layout")
        Xw = origin + best[..., None] * dirs
        return best, Xw, pid

    def shade_background(self, Xw, pid):
        uv, _ = project(Xw, self.K)
        off = self.spec.texture.offset
        far = evaluate_texture(self.spec.texture.sinusoids, uv[..., 0], uv[..., 1], off)
        if len(self.patches) == 1:
            return far
        near = evaluate_texture(self._near_tex, uv[..., 0], uv[..., 1], off)
        return np.where((pid == 1)[..., None], near, far)

    def object_label(self, k, x, y):
        label = np.full(np.shape(x), -1, dtype=np.int64)
        for i, obj in enumerate(self.spec.objects):
            ox = obj.rect[0] + k * obj.velocity[0]
            oy = obj.rect[1] + k * obj.velocity[1]
            inside = (x >= ox) & (x < ox + obj.rect[2]) & (y >= oy) & (y < oy + obj.rect[3])
            label = np.where(inside, i, label)
        return label

    def render(self, k, x, y):
        """Intensity, depth and object label of frame ``k`` at ``(x, y)``."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        depth, Xw, pid = self.background(k, x, y)
        color = self.shade_background(Xw, pid)
        label = self.object_label(k, x, y)
        for i, obj in enumerate(self.spec.objects):
            m = label == i
            if not np.any(m):
                continue
            u = x[m] - obj.rect[0] - k * obj.velocity[0]
            v = y[m] - obj.rect[1] - k * obj.velocity[1]
            color[m] = evaluate_texture(obj.texture.sinusoids, u, v, obj.texture.offset)
            depth = np.where(m, obj.depth, depth)
        return color, depth, label


def flow_at(r, t, s, x, y):
    """Rigid and full flow from frame ``t`` to ``s`` at arbitrary points of frame ``t``.

    Returns ``(rigid, full, label, depth_in_s)``.
    """
    K = r.K
    _, depth, label = r.render(t, x, y)
    R, tr = r.relative_pose(t, s)
    # same normalized form as the rigid-flow operator, exact for a static camera
    ray = np.stack([(x - K.cx) / K.fx, (y - K.cy) / K.fy, np.ones_like(x)], axis=-1)
    n = ray @ R.T + (1.0 / depth)[..., None] * tr
    rigid = np.stack(
        [K.fx * (n[..., 0] / n[..., 2] - ray[..., 0]), K.fy * (n[..., 1] / n[..., 2] - ray[..., 1])], axis=-1
    )
    full = rigid.copy()
    for i, obj in enumerate(r.spec.objects):
        m = label == i
        full[m] = (s - t) * np.asarray(obj.velocity, dtype=np.float64)
    return rigid, full, label, n[..., 2] * depth


def _pair_direction(r, t, s):
    """Rigid, residual, full flow and occlusion for pixels of frame ``t`` seen in ``s``."""
    spec = r.spec
    x, y = pixel_grid(spec.height, spec.width)
    rigid, full, lab, z_s = flow_at(r, t, s, x, y)
    residual = full - rigid
    full = rigid + residual

    xs, ys = x + full[..., 0], y + full[..., 1]
    lab_s = r.object_label(s, xs, ys)
    depth_s, _, _ = r.background(s, xs, ys)
    occluded = lab_s != lab
    bg = lab == -1
    # a nearer background layer hides the point in the source frame
    occluded |= bg & (depth_s < z_s * (1 - 1e-9) - 1e-9)
    return rigid, residual, full, occluded.astype(np.float64)


def generate_scene(spec):
    """Render all frames and ground truth of ``spec`` (resolved first)."""
    spec = resolve_spec(spec)
    r = SceneRenderer(spec)
    x, y = pixel_grid(spec.height, spec.width)
    frames, depths, labels = [], [], []
    for k in range(spec.num_frames):
        color, depth, label = r.render(k, x, y)
        frames.append(color)
        depths.append(depth)
        labels.append(label)
    pairs = []
    for t in range(spec.num_frames - 1):
        s = t + 1
        R, tr = r.relative_pose(t, s)
        pose = PoseSE3(tuple(rotation_to_euler(R)), tuple(tr))
        fwd = _pair_direction(r, t, s)
        bwd = _pair_direction(r, s, t)
        pairs.append(PairTruth(t, s, pose, *fwd, *bwd))
    return Scene(spec, frames, depths, labels, pairs)


@dataclass
class SelfCheckReport:
    passed: bool
    max_residual: float
    failures: list

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} max_residual = {self.max_residual:.3e}"]
        lines += [f"  - {f}" for f in self.failures]
        return "\n".join(lines)


def scene_self_check(scene, tol=1e-6, rigid_tol=1e-9):
    """Verify photometric exactness and flow decomposition of a generated scene.

    The source frame is rendered continuously at ``p + full_flow(p)`` and
    compared with the target frame on every non-occluded pixel. The opposite
    flow is also evaluated continuously at that point; forward plus
    backward must cancel to ``tol`` there.
    """
    spec = resolve_spec(scene.spec)
    r = SceneRenderer(spec)
    x, y = pixel_grid(spec.height, spec.width)
    failures = []
    worst = 0.0
    for i, pair in enumerate(scene.pairs):
        for d, (t, s, full, rigid, residual, occ) in {
            "fwd": (pair.target, pair.source, pair.full_fwd, pair.rigid_fwd, pair.residual_fwd, pair.occlusion_fwd),
            "bwd": (pair.source, pair.target, pair.full_bwd, pair.rigid_bwd, pair.residual_bwd, pair.occlusion_bwd),
        }.items():
            if not np.array_equal(full, rigid + residual):
                failures.append(f"pair {i} {d}: full flow != rigid + residual")
            R, tr = r.relative_pose(t, s)
            if d == "fwd":
                ref, valid = rigid_flow(scene.gt_depth[t], pair.pose, spec.intrinsics)
            else:
                ref, valid = rigid_flow_rt(scene.gt_depth[t], R, tr, spec.intrinsics)
            err = np.max(np.abs(ref - rigid)[valid > 0], initial=0.0)
            if err > rigid_tol:
                failures.append(f"pair {i} {d}: rigid flow deviates by {err:.3e}")
            xs, ys = x + full[..., 0], y + full[..., 1]
            color, _, _ = r.render(s, xs, ys)
            res = np.abs(scene.frames[t] - color).max(axis=-1)
            res = np.where(occ > 0, 0.0, res)
            m = float(res.max())
            worst = max(worst, m)
            if m >= tol:
                failures.append(f"pair {i} {d}: photometric residual {m:.3e} >= {tol:g}")
            _, back, _, _ = flow_at(r, s, t, xs, ys)
            fb = np.linalg.norm(full + back, axis=-1)
            fb = float(np.max(np.where(occ > 0, 0.0, fb)))
            if fb >= tol:
                failures.append(f"pair {i} {d}: forward-backward mismatch {fb:.3e} >= {tol:g}")
    return SelfCheckReport(not failures, worst, failures)


# --------------------------------------------------------------------------
# config text


def _floats(text, n=None, field_name=""):
    try:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise InvalidSpecError(f"{field_name}: expected numbers, got {text!r}", field_name) from exc
    if n is not None and len(vals) != n:
        raise InvalidSpecError(f"{field_name}: expected {n} numbers, got {len(vals)}", field_name)
    return vals


def _texture_from_section(sec, base, prefix):
    kwargs = {}
    sinusoids = {}
    for key, value in sec.items():
        name = f"{prefix}.{key}"
        if key in ("components",):
            kwargs[key] = int(value)
        elif key in ("period_min", "period_max", "amplitude", "offset"):
            kwargs[key] = float(value)
        elif key.startswith("sinusoid."):
            vals = _floats(value, None, name)
            if len(vals) < 4:
                raise InvalidSpecError(f"{name}: need amplitude kx ky phase...", name)
            sinusoids[int(key.split(".", 1)[1])] = Sinusoid(vals[0], vals[1], vals[2], vals[3:])
        else:
            raise InvalidSpecError(f"unknown key {name}", name)
    if sinusoids:
        kwargs["sinusoids"] = tuple(sinusoids[i] for i in sorted(sinusoids))
    return replace(base, **kwargs)


_SCENE_KEYS = {"width", "height", "channels", "num_frames", "intrinsics", "seed"}
_LAYOUT_KEYS = {"kind", "depth", "slope", "near_depth", "near_rect"}
_OBJECT_KEYS = {"rect", "velocity", "depth"}


def parse_scene_config(text, sections=None):
    """Build a :class:`SceneSpec` from ``key = value`` config text.

    Sections: ``[scene]``, ``[layout]``, ``[texture]``, ``[pose.K]`` (frame
    ``K`` pose ``T_{0->K}`` with ``rotation`` and ``translation``) and
    ``[object.N]`` (``rect``, ``velocity``, ``depth`` plus texture keys).
    Unknown sections or keys raise :class:`InvalidSpecError`.
    ``sections`` optionally names extra sections that belong to other
    consumers and are skipped.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidSpecError(f"config syntax error: {exc}") from exc
    return spec_from_parser(cp, sections or ())


def spec_from_parser(cp, skip=()):
    spec = SceneSpec()
    scene_kw, layout_kw = {}, {}
    poses, objects = {}, {}
    texture = spec.texture
    for name in cp.sections():
        sec = cp[name]
        if name in skip:
            continue
        if name == "scene":
            for key, value in sec.items():
                f = f"scene.{key}"
                if key not in _SCENE_KEYS:
                    raise InvalidSpecError(f"unknown key {f}", f)
                if key == "intrinsics":
                    scene_kw[key] = CameraIntrinsics(*_floats(value, 4, f))
                else:
                    try:
                        scene_kw[key] = int(value)
                    except ValueError as exc:
                        raise InvalidSpecError(f"{f}: expected an integer", f) from exc
        elif name == "layout":
            for key, value in sec.items():
                f = f"layout.{key}"
                if key not in _LAYOUT_KEYS:
                    raise InvalidSpecError(f"unknown key {f}", f)
                if key == "kind":
                    layout_kw[key] = value.strip()
                elif key == "slope":
                    layout_kw[key] = _floats(value, 2, f)
                elif key == "near_rect":
                    layout_kw[key] = _floats(value, 4, f)
                else:
                    layout_kw[key] = _floats(value, 1, f)[0]
        elif name == "texture":
            texture = _texture_from_section(sec, texture, "texture")
        elif name.startswith("pose."):
            idx = _section_index(name)
            kw = {}
            for key, value in sec.items():
                f = f"{name}.{key}"
                if key not in ("rotation", "translation"):
                    raise InvalidSpecError(f"unknown key {f}", f)
                kw[key] = _floats(value, 3, f)
            poses[idx] = PoseSE3(**kw)
        elif name.startswith("object."):
            idx = _section_index(name)
            kw = {}
            tex_items = {}
            for key, value in sec.items():
                f = f"{name}.{key}"
                if key == "rect":
                    kw[key] = _floats(value, 4, f)
                elif key == "velocity":
                    kw[key] = _floats(value, 2, f)
                elif key == "depth":
                    kw[key] = _floats(value, 1, f)[0]
                else:
                    tex_items[key] = value
            for req in ("rect", "velocity"):
                if req not in kw:
                    raise InvalidSpecError(f"{name} needs {req}", f"{name}.{req}")
            kw["texture"] = _texture_from_section(tex_items, MovingObject.texture, name)
            objects[idx] = MovingObject(**kw)
        else:
            raise InvalidSpecError(f"unknown section [{name}]", name)
    n = scene_kw.get("num_frames", spec.num_frames)
    if poses:
        if max(poses) >= n:
            raise InvalidSpecError(f"pose.{max(poses)} exceeds num_frames={n}", f"pose.{max(poses)}")
        scene_kw["poses"] = tuple(poses.get(k, PoseSE3()) for k in range(n))
    if objects:
        scene_kw["objects"] = tuple(objects[i] for i in sorted(objects))
    try:
        layout = replace(spec.layout, **layout_kw)
    except TypeError as exc:
        raise InvalidSpecError(str(exc), "layout") from exc
    return replace(spec, layout=layout, texture=texture, **scene_kw)


def _section_index(name):
    try:
        return int(name.split(".", 1)[1])
    except ValueError as exc:
        raise InvalidSpecError(f"bad section name [{name}]", name) from exc


def _fmt(vals):
    return " ".join(repr(float(v)) for v in vals)


def _texture_lines(tex):
    lines = [
        f"components = {tex.components}",
        f"period_min = {tex.period_min!r}",
        f"period_max = {tex.period_max!r}",
        f"amplitude = {tex.amplitude!r}",
        f"offset = {tex.offset!r}",
    ]
    for i, s in enumerate(tex.sinusoids):
        lines.append(f"sinusoid.{i} = {_fmt((s.amplitude, s.kx, s.ky) + tuple(s.phases))}")
    return lines


def scene_config_text(spec):
    """Config text that :func:`parse_scene_config` maps back to ``spec`` exactly."""
    k = spec.intrinsics
    out = ["[scene]", f"width = {spec.width}", f"height = {spec.height}",
           f"channels = {spec.channels}", f"num_frames = {spec.num_frames}", f"seed = {spec.seed}"]
    if k is not None:
        out.append(f"intrinsics = {_fmt((k.fx, k.fy, k.cx, k.cy))}")
    lay = spec.layout
    out += ["", "[layout]", f"kind = {lay.kind}", f"depth = {lay.depth!r}", f"slope = {_fmt(lay.slope)}",
            f"near_depth = {lay.near_depth!r}", f"near_rect = {_fmt(lay.near_rect)}"]
    out += ["", "[texture]"] + _texture_lines(spec.texture)
    for i, p in enumerate(spec.poses):
        out += ["", f"[pose.{i}]", f"rotation = {_fmt(p.rotation)}", f"translation = {_fmt(p.translation)}"]
    for i, obj in enumerate(spec.objects):
        out += ["", f"[object.{i}]", f"rect = {_fmt(obj.rect)}", f"velocity = {_fmt(obj.velocity)}"]
        if obj.depth is not None:
            out.append(f"depth = {obj.depth!r}")
        out += _texture_lines(obj.texture)
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# directory export


def _pair_files(i):
    names = {}
    for d in ("fwd", "bwd"):
        for kind in ("rigid", "residual", "full"):
            names[f"{kind}_{d}"] = f"pair_{i:03d}_{kind}_{d}.flo"
        names[f"occlusion_{d}"] = f"pair_{i:03d}_occ_{d}.pgm"
    return names


def camera_to_world(pose):
    """KITTI-style ``[R | t]`` of camera-to-world for a ``T_{0->k}`` pose."""
    R = pose.R
    return np.hstack([R.T, (-R.T @ pose.t)[:, None]])


def write_scene(scene, out_dir):
    """Export frames (PPM/PGM + lossless PFM), depths, flows, masks, poses and a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    spec = scene.spec
    ext = "ppm" if spec.channels == 3 else "pgm"
    files = {"frames": [], "frames_float": [], "depth": [], "labels": [], "pairs": []}
    for k, frame in enumerate(scene.frames):
        name = f"frame_{k:03d}.{ext}"
        write_pnm(os.path.join(out_dir, name), frame)
        files["frames"].append(name)
        fname = f"frame_{k:03d}.pfm"
        write_pfm(os.path.join(out_dir, fname), frame if spec.channels == 3 else frame[..., 0])
        files["frames_float"].append(fname)
        dname = f"depth_{k:03d}.pfm"
        write_pfm(os.path.join(out_dir, dname), scene.gt_depth[k])
        files["depth"].append(dname)
        lname = f"labels_{k:03d}.pgm"
        write_pnm(os.path.join(out_dir, lname), (scene.labels[k] + 1) / 255.0)
        files["labels"].append(lname)
    for i, pair in enumerate(scene.pairs):
        names = _pair_files(i)
        for key, name in names.items():
            arr = getattr(pair, key)
            path = os.path.join(out_dir, name)
            if name.endswith(".flo"):
                write_flo(path, arr)
            else:
                write_pnm(path, arr)
        files["pairs"].append({"target": pair.target, "source": pair.source, **names})
    write_poses(os.path.join(out_dir, "pair_poses.txt"), [p.pose.matrix() for p in scene.pairs])
    write_poses(os.path.join(out_dir, "poses.txt"), [camera_to_world(p) for p in spec.poses])
    files["pair_poses"] = "pair_poses.txt"
    files["poses"] = "poses.txt"
    with open(os.path.join(out_dir, "scene.cfg"), "w") as f:
        f.write(scene_config_text(spec))
    files["config"] = "scene.cfg"
    k = spec.intrinsics
    manifest = {
        "format": "warpgeo-scene/1",
        "width": spec.width,
        "height": spec.height,
        "channels": spec.channels,
        "num_frames": spec.num_frames,
        "intrinsics": [k.fx, k.fy, k.cx, k.cy],
        "files": files,
        "spec": _spec_dict(spec),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def _spec_dict(spec):
    d = asdict(spec)
    return json.loads(json.dumps(d))


def read_scene(scene_dir):
    """Load a directory written by :func:`write_scene`.

    Frames come from the lossless PFM copies; flows and depths are float32
    precision.
    """
    try:
        with open(os.path.join(scene_dir, "manifest.json")) as f:
            manifest = json.load(f)
        with open(os.path.join(scene_dir, manifest["files"]["config"])) as f:
            spec = parse_scene_config(f.read())
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{scene_dir}: not a scene directory ({exc})") from exc
    files = manifest["files"]
    join = lambda name: os.path.join(scene_dir, name)  # noqa: E731
    frames = [read_image(join(n)) for n in files["frames_float"]]
    depths = [read_pfm(join(n)) for n in files["depth"]]
    labels = [np.round(read_pnm(join(n))[..., 0] * 255).astype(np.int64) - 1 for n in files["labels"]]
    rel = read_poses(join(files["pair_poses"]))
    pairs = []
    for i, entry in enumerate(files["pairs"]):
        arrays = {}
        for key, name in _pair_files(i).items():
            arrays[key] = read_flo(join(name)) if name.endswith(".flo") else read_pnm(join(name))[..., 0]
        pairs.append(PairTruth(entry["target"], entry["source"], PoseSE3.from_matrix(rel[i]), **arrays))
    return Scene(spec, frames, depths, labels, pairs)


def config_buffer(spec):
    return io.StringIO(scene_config_text(spec))
