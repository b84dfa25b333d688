"""Finite-difference audits of every hand-written gradient.

Each audit draws a random instance, contracts the operation's output with a
random cotangent to get a scalar, and compares the analytic gradient of that
scalar with central differences taken over every input element.

The error of one element is ``|a - n| / max(|a|, |n|, floor)`` where ``a``
and ``n`` are the analytic and numeric values and ``floor`` is ``1e-3``
times the largest magnitude in either gradient, so entries that are zero up
to rounding do not dominate the report.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .consistency import ConsistencyParams, flow_difference, flow_difference_vjp
from .geometry import CameraIntrinsics, PoseSE3, rigid_flow, rigid_flow_vjp
from .grids import bilinear_sample, bilinear_scatter, pixel_grid
from .losses import (
    LossWeights,
    edge_aware_smoothness_grad,
    geometric_consistency_loss_grad,
    photometric_loss_grad,
    ssim_map,
    ssim_map_vjp,
)
from .objective import FramePair, total_loss
from .warping import WarpResult, inverse_warp, inverse_warp_vjp

TOLERANCE = 1e-4
DEFAULT_STEP = 1e-6
H, W = 8, 12
K_SMALL = CameraIntrinsics(12.0, 12.0, 5.5, 3.5)


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    if scale == 0.0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3 * scale)
    return float(np.max(np.abs(a - n) / den))


def numeric_gradient(fn, x, step=DEFAULT_STEP):
    """Central differences of scalar ``fn`` w.r.t. every element of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = fn(x)
        flat[i] = old - step
        fm = fn(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * step)
    return g


def _refine(fn, x, analytic, numeric, step):
    """Re-estimate disagreeing elements with smaller steps.

    Moving one pose scalar shifts every sample, so a central difference can
    straddle a bilinear cell edge. Where the estimate disagrees with the
    analytic value, the difference is retaken at ``step/10`` and
    ``step/100``; the smaller-step value replaces the original only when
    those two agree, i.e. when the stencil no longer crosses a kink.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = numeric.reshape(-1).copy()
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(n.size):
        den = max(abs(a[i]), abs(n[i]), 1e-3 * scale)
        if den == 0 or abs(a[i] - n[i]) / den < TOLERANCE:
            continue
        est = []
        for h in (step / 10, step / 100):
            old = flat[i]
            flat[i] = old + h
            fp = fn(x)
            flat[i] = old - h
            fm = fn(x)
            flat[i] = old
            est.append((fp - fm) / (2 * h))
        if abs(est[0] - est[1]) < TOLERANCE * max(abs(est[0]), abs(est[1]), 1e-3 * scale):
            n[i] = est[1]
    return n.reshape(numeric.shape)


def _away_from_integers(v, margin, rng):
    # shift values whose fractional part is within margin of an integer
    frac = v - np.floor(v)
    bad = (frac < margin) | (frac > 1 - margin)
    return np.where(bad, np.floor(v) + rng.uniform(margin, 1 - margin, v.shape), v)


def _interior_flow(rng, max_disp=2.5, margin=0.05):
    """Random flow whose targets stay inside the grid and off integer coordinates."""
    x, y = pixel_grid(H, W)
    tx = np.clip(x + rng.uniform(-max_disp, max_disp, x.shape), 0.05, W - 1.05)
    ty = np.clip(y + rng.uniform(-max_disp, max_disp, y.shape), 0.05, H - 1.05)
    tx = _away_from_integers(tx, margin, rng)
    ty = _away_from_integers(ty, margin, rng)
    return np.stack([tx - x, ty - y], axis=-1)


# each audit returns a list of (input name, analytic gradient, scalar fn, input)


def audit_bilinear_sample(rng):
    grid = rng.random((H, W, 3))
    n = 20
    x = _away_from_integers(rng.uniform(0, W - 1, n), 0.25, rng)
    y = _away_from_integers(rng.uniform(0, H - 1, n), 0.25, rng)
    up = rng.normal(size=(n, 3))
    _, _, ddx, ddy = bilinear_sample(grid, x, y, with_grad=True)
    gx = np.sum(up * ddx, axis=-1)
    gy = np.sum(up * ddy, axis=-1)
    gg = bilinear_scatter(up, x, y, grid.shape)
    f = lambda xx, yy, gr: float(np.sum(up * bilinear_sample(gr, xx, yy)[0]))  # noqa: E731
    return [
        ("x", gx, lambda v: f(v, y, grid), x),
        ("y", gy, lambda v: f(x, v, grid), y),
        ("grid", gg, lambda v: f(x, y, v), grid),
    ]


def audit_inverse_warp(rng):
    src = rng.random((H, W, 3))
    flow = _interior_flow(rng)
    up = rng.normal(size=(H, W, 3))
    g_flow, g_src = inverse_warp_vjp(src, flow, up)
    f = lambda s, fl: float(np.sum(up * inverse_warp(s, fl).warped))  # noqa: E731
    return [
        ("flow", g_flow, lambda v: f(src, v), flow),
        ("source", g_src, lambda v: f(v, flow), src),
    ]


def audit_rigid_flow(rng):
    depth = rng.uniform(4.0, 12.0, (H, W))
    vec = np.concatenate([rng.normal(0, 0.05, 3), rng.normal(0, 0.5, 3)])
    up = rng.normal(size=(H, W, 2))
    gd, ga, gt = rigid_flow_vjp(depth, PoseSE3.from_vector(vec), K_SMALL, up)
    f = lambda d, v: float(np.sum(up * rigid_flow(d, PoseSE3.from_vector(v), K_SMALL)[0]))  # noqa: E731
    return [
        ("depth", gd, lambda v: f(v, vec), depth),
        ("pose", np.concatenate([ga, gt]), lambda v: f(depth, v), vec),
    ]


def audit_ssim(rng):
    a = rng.random((H, W, 3))
    b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    up = rng.normal(size=a.shape)
    ga, gb = ssim_map_vjp(a, b, up)
    f = lambda x, y: float(np.sum(up * ssim_map(x, y)))  # noqa: E731
    return [
        ("a", ga, lambda v: f(v, b), a),
        ("b", gb, lambda v: f(a, v), b),
    ]


def audit_photometric(rng):
    t = rng.random((H, W, 3))
    b = rng.random((H, W, 3))
    valid = (rng.random((H, W)) > 0.2).astype(np.float64)
    mask = rng.random((H, W))
    _, g = photometric_loss_grad(t, WarpResult(b, valid), mask)
    f = lambda x: photometric_loss_grad(t, WarpResult(x, valid), mask)[0]  # noqa: E731
    return [("warped", g, f, b)]


def audit_smoothness(rng):
    guide = rng.random((H, W, 3))
    depth = rng.uniform(1.0, 5.0, (H, W))
    flow = rng.normal(0, 2.0, (H, W, 2))
    _, gd = edge_aware_smoothness_grad(depth, guide)
    _, gf = edge_aware_smoothness_grad(flow, guide)
    return [
        ("depth", gd, lambda v: edge_aware_smoothness_grad(v, guide)[0], depth),
        ("flow", gf, lambda v: edge_aware_smoothness_grad(v, guide)[0], flow),
    ]


def audit_consistency(rng):
    f_fwd = _interior_flow(rng)
    f_bwd = rng.normal(0, 1.5, (H, W, 2))
    up = rng.normal(size=(H, W, 2))
    g_fwd, g_bwd = flow_difference_vjp(f_fwd, f_bwd, up)
    fd = lambda a, b: float(np.sum(up * flow_difference(a, b)[0]))  # noqa: E731
    delta = rng.normal(0, 2.0, (H, W, 2))
    inl = (rng.random((H, W)) > 0.3).astype(np.float64)
    _, g_delta = geometric_consistency_loss_grad(delta, inl)
    return [
        ("f_fwd", g_fwd, lambda v: fd(v, f_bwd), f_fwd),
        ("f_bwd", g_bwd, lambda v: fd(f_fwd, v), f_bwd),
        ("delta", g_delta, lambda v: geometric_consistency_loss_grad(v, inl)[0], delta),
    ]


def _random_pair(rng):
    return FramePair(
        target=rng.random((H, W, 3)),
        source=rng.random((H, W, 3)),
        depth_t=rng.uniform(6.0, 10.0, (H, W)),
        depth_s=rng.uniform(6.0, 10.0, (H, W)),
        pose=np.concatenate([rng.normal(0, 0.02, 3), rng.normal(0, 0.3, 3)]),
        residual_fwd=rng.normal(0, 0.5, (H, W, 2)),
        residual_bwd=rng.normal(0, 0.5, (H, W, 2)),
    )


def audit_objective(rng):
    pair = _random_pair(rng)
    w = LossWeights(num_scales=2)
    c = ConsistencyParams()
    _, grads = total_loss([pair], K_SMALL, w, c, need_grad=True)
    out = []
    for name in ("pose", "depth_t", "depth_s", "residual_fwd", "residual_bwd"):
        def f(v, name=name):
            p = FramePair(**{**pair.__dict__, name: v})
            return total_loss([p], K_SMALL, w, c).total

        out.append((name, grads[0][name], f, getattr(pair, name)))
    return out


AUDITS = {
    "bilinear_sample": audit_bilinear_sample,
    "inverse_warp": audit_inverse_warp,
    "rigid_flow": audit_rigid_flow,
    "ssim": audit_ssim,
    "photometric": audit_photometric,
    "smoothness": audit_smoothness,
    "consistency": audit_consistency,
    "objective": audit_objective,
}
# the whole-objective audit is slower; it runs fewer trials by default
DEFAULT_TRIALS = {"objective": 3}
# ops whose inputs cannot be kept away from kinks by construction
REFINED = {"objective"}


@dataclass
class OpReport:
    op: str
    trial_errors: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def max_error(self):
        return max((e for e, _ in self.trial_errors), default=0.0)

    @property
    def passed(self):
        return self.max_error < TOLERANCE


def run_gradcheck(ops=None, trials=20, seed=0, step=DEFAULT_STEP, corrupt=None):
    """Audit the named ops (all by default).

    Args:
        trials: random instances per op; ``None`` uses per-op defaults with
            20 for every op not listed in ``DEFAULT_TRIALS``.
        corrupt: name of an op whose analytic gradient is deliberately
            scaled by 1.01, to show that the audit catches it.

    Returns:
        list of :class:`OpReport`.
    """
    ops = list(ops or AUDITS)
    reports = []
    for op in ops:
        if op not in AUDITS:
            raise KeyError(op)
        n = trials if trials is not None else DEFAULT_TRIALS.get(op, 20)
        rep = OpReport(op)
        start = time.perf_counter()
        for i in range(n):
            rng = np.random.default_rng([seed, i, list(AUDITS).index(op)])
            worst, where = 0.0, ""
            for name, analytic, fn, x in AUDITS[op](rng):
                if op == corrupt:
                    analytic = np.asarray(analytic) * 1.01
                numeric = numeric_gradient(fn, x, step)
                if op in REFINED:
                    numeric = _refine(fn, x, analytic, numeric, step)
                e = relative_error(analytic, numeric)
                if e >= worst:
                    worst, where = e, name
            rep.trial_errors.append((worst, where))
        rep.seconds = time.perf_counter() - start
        reports.append(rep)
    return reports


def format_report(reports, per_trial=False):
    lines = [f"{'op':<16} {'trials':>6} {'max_rel_err':>12} {'seconds':>8}  status"]
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.op:<16} {len(r.trial_errors):>6} {r.max_error:>12.3e} {r.seconds:>8.2f}  {status}")
        if per_trial:
            for i, (e, where) in enumerate(r.trial_errors):
                lines.append(f"  trial {i:<4} {e:.3e}  ({where})")
    return "\n".join(lines)
