"""Direct recovery of depth, pose and residual flow by minimizing the view-synthesis objective.

The variables are stored by name in flat dictionaries:

* ``log_depth/<frame>``: per-pixel log depth of a frame
* ``pose/<pair>``: 6-vector of ``T_{t->s}`` for pair ``<k, k+1>``
* ``res_fwd/<pair>``, ``res_bwd/<pair>``: residual flow per direction

Optimization runs stage by stage (rigid, then residual) and, within a stage,
pyramid level by level from coarse to fine.
"""

import configparser
import io
import math
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .consistency import ConsistencyParams
from .errors import DivergenceError, InvalidSpecError, NonFiniteGradientError
from .geometry import PoseSE3
from .grids import avg_pool2, build_pyramid, upsample_to
from .losses import TERMS, LossWeights
from .objective import FramePair, evaluate_pair, total_loss

DEPTH_MIN = 0.1
DEPTH_MAX = 100.0
MAX_HALVINGS = 5
LR_RECOVERY = 1.25
MIN_LR_FACTOR = 1e-6
DIVERGENCE_FACTOR = 10.0
# absolute floor so a near-zero best loss does not flag every rejected step
DIVERGENCE_FLOOR = 1e-3
STAGES = ("rigid", "residual")
TRACE_COLUMNS = ("iteration",) + TERMS + ("total", "stage", "level")


@dataclass(frozen=True)
class AdamParams:
    """Adam hyper-parameters of one stage.

    ``lr_scale`` maps a variable group (``log_depth``, ``pose``, ``res_fwd``,
    ``res_bwd``) to a multiplier of ``lr``.
    """

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iters: int = 2000
    stage: str = "rigid"
    lr_scale: tuple = ()

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidSpecError("lr must be positive", "lr")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidSpecError("beta1 and beta2 must lie in [0, 1)", "beta1")
        if not self.epsilon > 0:
            raise InvalidSpecError("epsilon must be positive", "epsilon")
        if self.max_iters < 0:
            raise InvalidSpecError("max_iters must be non-negative", "max_iters")
        if self.stage not in STAGES + ("joint",):
            raise InvalidSpecError(f"unknown stage {self.stage!r}", "stage")

    def group_lr(self, name):
        return self.lr * dict(self.lr_scale).get(name.split("/", 1)[0], 1.0)


@dataclass
class OptimState:
    """Variables plus Adam moments; ``iteration`` counts Adam steps."""

    variables: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    iteration: int = 0

    def __post_init__(self):
        for k, x in self.variables.items():
            self.m.setdefault(k, np.zeros_like(x))
            self.v.setdefault(k, np.zeros_like(x))

    def copy(self):
        return OptimState(
            {k: x.copy() for k, x in self.variables.items()},
            {k: x.copy() for k, x in self.m.items()},
            {k: x.copy() for k, x in self.v.items()},
            self.iteration,
        )


def adam_step(state, grads, params, lr_factor=1.0):
    """One bias-corrected Adam update of every variable named in ``grads``.

    Variables without a gradient entry are left untouched. Log-depth values
    are projected onto ``[log DEPTH_MIN, log DEPTH_MAX]``.

    Raises:
        NonFiniteGradientError: if any gradient entry is NaN or infinite.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise NonFiniteGradientError(f"gradient of {k} has {bad} non-finite entries")
    t = state.iteration + 1
    out = OptimState(dict(state.variables), dict(state.m), dict(state.v), t)
    bc1 = 1.0 - params.beta1**t
    bc2 = 1.0 - params.beta2**t
    for k, g in grads.items():
        m = params.beta1 * state.m[k] + (1.0 - params.beta1) * g
        v = params.beta2 * state.v[k] + (1.0 - params.beta2) * g * g
        step = params.group_lr(k) * lr_factor * (m / bc1) / (np.sqrt(v / bc2) + params.epsilon)
        x = state.variables[k] - step
        if k.startswith("log_depth/"):
            x = np.clip(x, math.log(DEPTH_MIN), math.log(DEPTH_MAX))
        out.variables[k] = x
        out.m[k] = m
        out.v[k] = v
    return out


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class StageConfig:
    adam: AdamParams
    num_levels: int = 3
    optimize_depth: bool = True
    optimize_pose: bool = True
    init_depth: str = "flat 10"
    init_pose: str = "identity"
    init_residual: str = "zero"
    tol: float = 0.0
    patience: int = 50


@dataclass(frozen=True)
class OptimizerConfig:
    rigid: StageConfig = StageConfig(AdamParams(stage="rigid"))
    residual: StageConfig = StageConfig(AdamParams(stage="residual"))
    weights: LossWeights = LossWeights()
    consistency: ConsistencyParams = ConsistencyParams()
    mask_mode: str = "adaptive"
    seed: int = 0
    checkpoint_every: int = 100


_STAGE_KEYS = {
    "lr", "beta1", "beta2", "epsilon", "max_iters", "num_levels", "optimize_depth",
    "optimize_pose", "init_depth", "init_pose", "init_residual", "tol", "patience",
    "lr_scale.log_depth", "lr_scale.pose", "lr_scale.res_fwd", "lr_scale.res_bwd",
}
_LOSS_KEYS = {"alpha_ssim", "lambda_ds", "lambda_fs", "lambda_gc", "num_scales"}
_CONS_KEYS = {"alpha_px", "beta_rel", "mode"}
_RUN_KEYS = {"seed", "checkpoint_every"}
OPTIMIZER_SECTIONS = ("rigid", "residual", "loss", "consistency", "run")


def _bool(value, name):
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InvalidSpecError(f"{name}: expected a boolean, got {value!r}", name)


def _num(value, name, kind=float):
    try:
        return kind(value)
    except ValueError as exc:
        raise InvalidSpecError(f"{name}: expected a number, got {value!r}", name) from exc


def _check_init(value, name, choices):
    words = value.split()
    if not words or words[0] not in choices:
        raise InvalidSpecError(f"{name}: expected one of {sorted(choices)}", name)
    arity = choices[words[0]]
    if len(words) - 1 != arity:
        raise InvalidSpecError(f"{name}: {words[0]} takes {arity} values", name)
    for w in words[1:]:
        _num(w, name)
    return " ".join(words)


def _stage_from_section(sec, stage, base):
    adam_kw, kw, scales = {}, {}, dict(base.adam.lr_scale)
    for key, value in sec.items():
        name = f"{stage}.{key}"
        if key not in _STAGE_KEYS:
            raise InvalidSpecError(f"unknown key {name}", name)
        if key in ("lr", "beta1", "beta2", "epsilon"):
            adam_kw[key] = _num(value, name)
        elif key == "max_iters":
            adam_kw[key] = _num(value, name, int)
        elif key.startswith("lr_scale."):
            scales[key.split(".", 1)[1]] = _num(value, name)
        elif key in ("num_levels", "patience"):
            kw[key] = _num(value, name, int)
        elif key == "tol":
            kw[key] = _num(value, name)
        elif key in ("optimize_depth", "optimize_pose"):
            kw[key] = _bool(value, name)
        elif key == "init_depth":
            kw[key] = _check_init(value, name, {"gt": 0, "flat": 1})
        elif key == "init_pose":
            kw[key] = _check_init(value, name, {"gt": 0, "identity": 0, "perturb": 2})
        elif key == "init_residual":
            kw[key] = _check_init(value, name, {"zero": 0, "gt": 0})
    adam = replace(base.adam, lr_scale=tuple(sorted(scales.items())), **adam_kw)
    cfg = replace(base, adam=adam, **kw)
    if cfg.num_levels < 1:
        raise InvalidSpecError("num_levels must be >= 1", f"{stage}.num_levels")
    return cfg


def parse_optimizer_config(text, allow_other_sections=False):
    """Parse ``[rigid]``, ``[residual]``, ``[loss]``, ``[consistency]`` and ``[run]``."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidSpecError(f"config syntax error: {exc}") from exc
    cfg = OptimizerConfig()
    for name in cp.sections():
        sec = cp[name]
        if name in STAGES:
            cfg = replace(cfg, **{name: _stage_from_section(sec, name, getattr(cfg, name))})
        elif name == "loss":
            kw = {}
            for key, value in sec.items():
                if key not in _LOSS_KEYS:
                    raise InvalidSpecError(f"unknown key loss.{key}", f"loss.{key}")
                kw[key] = _num(value, f"loss.{key}", int if key == "num_scales" else float)
            try:
                cfg = replace(cfg, weights=replace(cfg.weights, **kw))
            except ValueError as exc:
                raise InvalidSpecError(str(exc), "loss") from exc
        elif name == "consistency":
            kw = {}
            for key, value in sec.items():
                f = f"consistency.{key}"
                if key not in _CONS_KEYS:
                    raise InvalidSpecError(f"unknown key {f}", f)
                if key == "mode":
                    if value.strip() not in ("adaptive", "naive"):
                        raise InvalidSpecError(f"{f}: expected adaptive or naive", f)
                    cfg = replace(cfg, mask_mode=value.strip())
                else:
                    kw[key] = _num(value, f)
            try:
                cfg = replace(cfg, consistency=replace(cfg.consistency, **kw))
            except ValueError as exc:
                raise InvalidSpecError(str(exc), "consistency") from exc
        elif name == "run":
            for key, value in sec.items():
                if key not in _RUN_KEYS:
                    raise InvalidSpecError(f"unknown key run.{key}", f"run.{key}")
                cfg = replace(cfg, **{key: _num(value, f"run.{key}", int)})
        elif not allow_other_sections:
            raise InvalidSpecError(f"unknown section [{name}]", name)
    return cfg


# --------------------------------------------------------------------------
# problem setup


@dataclass
class SceneData:
    """Inputs of an optimization run.

    ``gt`` optionally holds ``depth`` (per frame), ``pose`` (per pair,
    6-vectors) and ``residual_fwd``/``residual_bwd`` (per pair), used only
    by ``gt`` initializations.
    """

    frames: list
    K: object
    gt: dict = field(default_factory=dict)

    @property
    def num_pairs(self):
        return len(self.frames) - 1

    @classmethod
    def from_scene(cls, scene):
        """Frames, intrinsics and ground truth of a generated or loaded scene."""
        gt = {
            "depth": list(scene.gt_depth),
            "pose": [p.pose.as_vector() for p in scene.pairs],
            "residual_fwd": [p.residual_fwd for p in scene.pairs],
            "residual_bwd": [p.residual_bwd for p in scene.pairs],
        }
        return cls(list(scene.frames), scene.intrinsics, gt)


@dataclass
class RunState:
    """Everything needed to continue a run exactly where it stopped."""

    stage: str
    level: int
    level_iter: int
    global_iter: int
    state: OptimState
    fixed: dict
    best: float
    stall: int
    trace: list
    done: bool = False
    rigid_result: dict = None
    lr_factor: float = 1.0


MIN_SCALE_SIDE = 4


def feasible_scales(shape, wanted):
    """Largest scale count up to ``wanted`` whose coarsest level keeps ``MIN_SCALE_SIDE`` px."""
    n = 1
    while n < wanted and min(shape[0], shape[1]) >> n >= MIN_SCALE_SIDE:
        n += 1
    return n


def _pool_to(grid, level, flow=False):
    for _ in range(level):
        grid = avg_pool2(grid)
        if flow:
            grid = 0.5 * grid
    return grid


def _init_pose(spec, gt_pose, rng):
    words = spec.split()
    if words[0] == "gt":
        return np.asarray(gt_pose, dtype=np.float64).copy()
    if words[0] == "identity":
        return np.zeros(6)
    r, t = float(words[1]), float(words[2])
    dr = rng.normal(size=3)
    dt = rng.normal(size=3)
    out = np.asarray(gt_pose, dtype=np.float64).copy()
    out[:3] += r * dr / np.linalg.norm(dr)
    out[3:] += t * dt / np.linalg.norm(dt)
    return out


def _require_gt(data, key, what):
    if key not in data.gt:
        raise InvalidSpecError(f"{what} = gt needs ground truth {key}", what)
    return data.gt[key]


def initial_rigid_variables(data, cfg, level):
    """Coarsest-level variables of the rigid stage."""
    sc = cfg.rigid
    rng = np.random.default_rng(cfg.seed)
    variables, fixed = {}, {}
    h, w = data.frames[0].shape[:2]
    shape = (h >> level, w >> level)
    for i in range(len(data.frames)):
        if sc.init_depth.startswith("flat"):
            depth = np.full(shape, float(sc.init_depth.split()[1]))
        else:
            depth = _pool_to(_require_gt(data, "depth", "init_depth")[i], level)
        target = variables if sc.optimize_depth else fixed
        target[f"log_depth/{i}"] = np.log(np.clip(depth, DEPTH_MIN, DEPTH_MAX))
    for k in range(data.num_pairs):
        needs_gt = sc.init_pose.split()[0] in ("gt", "perturb")
        gt_pose = _require_gt(data, "pose", "init_pose")[k] if needs_gt else np.zeros(6)
        target = variables if sc.optimize_pose else fixed
        target[f"pose/{k}"] = _init_pose(sc.init_pose, gt_pose, rng)
    return variables, fixed


def initial_residual_variables(data, cfg, level):
    sc = cfg.residual
    h, w = data.frames[0].shape[:2]
    variables = {}
    for k in range(data.num_pairs):
        for d in ("fwd", "bwd"):
            if sc.init_residual == "gt":
                r = _pool_to(_require_gt(data, f"residual_{d}", "init_residual")[k], level, flow=True)
            else:
                r = np.zeros((h >> level, w >> level, 2))
            variables[f"res_{d}/{k}"] = r
    return variables


def _upsample_variables(variables, shape):
    out = {}
    for k, x in variables.items():
        if k.startswith("log_depth/"):
            out[k] = upsample_to(x, shape)
        elif k.startswith("res_"):
            out[k] = upsample_to(x, shape, flow=True)
        else:
            out[k] = x.copy()
    return out


class LevelObjective:
    """Loss and gradient of one stage at one pyramid level."""

    def __init__(self, data, cfg, stage, level, fixed, threads=1):
        self.cfg = cfg
        self.stage = stage
        self.level = level
        self.frames = [build_pyramid(f, level + 1)[level] for f in data.frames]
        self.K = data.K.at_level(level)
        self.fixed = fixed
        self.num_scales = feasible_scales(self.frames[0].shape, cfg.weights.num_scales)
        self.stages = (stage,)
        self.executor = ThreadPoolExecutor(threads) if threads > 1 else None

    def close(self):
        if self.executor is not None:
            self.executor.shutdown()

    def _get(self, variables, key):
        return variables[key] if key in variables else self.fixed[key]

    def pairs(self, variables):
        shape = self.frames[0].shape[:2] + (2,)
        out = []
        for k in range(len(self.frames) - 1):
            zero = np.zeros(shape)
            out.append(
                FramePair(
                    target=self.frames[k],
                    source=self.frames[k + 1],
                    depth_t=np.exp(self._get(variables, f"log_depth/{k}")),
                    depth_s=np.exp(self._get(variables, f"log_depth/{k + 1}")),
                    pose=self._get(variables, f"pose/{k}"),
                    residual_fwd=variables.get(f"res_fwd/{k}", self.fixed.get(f"res_fwd/{k}", zero)),
                    residual_bwd=variables.get(f"res_bwd/{k}", self.fixed.get(f"res_bwd/{k}", zero)),
                )
            )
        return out

    def __call__(self, variables, need_grad=True):
        pairs = self.pairs(variables)
        res = total_loss(
            pairs,
            self.K,
            self.cfg.weights,
            self.cfg.consistency,
            mask_mode=self.cfg.mask_mode,
            need_grad=need_grad,
            executor=self.executor,
            stages=self.stages,
            num_scales=self.num_scales,
        )
        if not need_grad:
            return res, None
        breakdown, pair_grads = res
        grads = {k: np.zeros_like(x) for k, x in variables.items()}
        for k, g in enumerate(pair_grads):
            for key, gkey, pid in (
                (f"log_depth/{k}", "depth_t", "depth_t"),
                (f"log_depth/{k + 1}", "depth_s", "depth_s"),
            ):
                if key in grads:
                    grads[key] += g[gkey] * getattr(pairs[k], pid)
            if f"pose/{k}" in grads:
                grads[f"pose/{k}"] += g["pose"]
            for d in ("fwd", "bwd"):
                if f"res_{d}/{k}" in grads:
                    grads[f"res_{d}/{k}"] += g[f"residual_{d}"]
        return breakdown, grads


# --------------------------------------------------------------------------
# main loop


@dataclass
class RunResult:
    """Final variables of a run.

    ``depth`` per frame, ``pose`` 6-vectors per pair, residual flows per pair
    and direction (empty when the residual stage did not run), the masks of
    the last evaluation and the loss trace rows.
    """

    depth: list
    pose: list
    residual_fwd: list
    residual_bwd: list
    mask_fwd: list
    mask_bwd: list
    rigid_fwd: list
    rigid_bwd: list
    trace: list
    completed: bool = True


def _stage_cfg(cfg, stage):
    return cfg.rigid if stage == "rigid" else cfg.residual


def _start_stage(data, cfg, stage, rigid_result=None):
    sc = _stage_cfg(cfg, stage)
    level = sc.num_levels - 1
    if stage == "rigid":
        variables, fixed = initial_rigid_variables(data, cfg, level)
    else:
        variables = initial_residual_variables(data, cfg, level)
        fixed = _frozen_rigid(rigid_result, level)
    return level, OptimState(variables), fixed


def _frozen_rigid(rigid_result, level):
    fixed = {}
    for i, d in enumerate(rigid_result["depth"]):
        fixed[f"log_depth/{i}"] = np.log(_pool_to(d, level))
    for k, p in enumerate(rigid_result["pose"]):
        fixed[f"pose/{k}"] = np.asarray(p, dtype=np.float64)
    return fixed


def _rigid_from_state(run, data):
    """Full-resolution depth and pose after the rigid stage."""
    allv = dict(run.fixed)
    allv.update(run.state.variables)
    depth = [np.exp(allv[f"log_depth/{i}"]) for i in range(len(data.frames))]
    pose = [allv[f"pose/{k}"].copy() for k in range(data.num_pairs)]
    return {"depth": depth, "pose": pose}


def new_run(data, cfg, stages=STAGES):
    stage = stages[0]
    rigid_result = None
    if stage == "residual":
        rigid_result = _rigid_init_for_residual(data, cfg)
    level, state, fixed = _start_stage(data, cfg, stage, rigid_result)
    return RunState(stage, level, 0, 0, state, fixed, math.inf, 0, [], rigid_result=rigid_result)


def _rigid_init_for_residual(data, cfg):
    """Rigid quantities for a residual-only run, from the rigid stage's init settings at full resolution."""
    variables, fixed = initial_rigid_variables(data, cfg, 0)
    allv = dict(fixed, **variables)
    return {
        "depth": [np.exp(allv[f"log_depth/{i}"]) for i in range(len(data.frames))],
        "pose": [allv[f"pose/{k}"] for k in range(data.num_pairs)],
    }


def run_optimization(data, cfg, stages=STAGES, run=None, threads=1, stop_after=None,
                     checkpoint=None, log=None):
    """Run (or continue) the staged, coarse-to-fine optimization.

    Args:
        data: :class:`SceneData`.
        cfg: :class:`OptimizerConfig`.
        stages: ``("rigid",)``, ``("residual",)`` or both, in order.
        run: a :class:`RunState` to continue from (see :func:`load_checkpoint`).
        threads: worker threads for evaluating pairs concurrently.
        stop_after: stop once this many iterations have run in total
            (returns the unfinished :class:`RunState`).
        checkpoint: optional callable receiving the :class:`RunState` every
            ``cfg.checkpoint_every`` iterations and at level boundaries.
        log: optional callable receiving one status string per level.

    Returns:
        ``(RunResult, RunState)``; ``RunResult.completed`` is false when the
        run stopped early because of ``stop_after``.

    Raises:
        DivergenceError: when the loss exceeds ``DIVERGENCE_FACTOR`` times
            the best loss seen at the current level (floored at ``DIVERGENCE_FLOOR``).
        NonFiniteGradientError: on a NaN or infinite gradient.
    """
    if run is None:
        run = new_run(data, cfg, stages)
    while not run.done:
        sc = _stage_cfg(cfg, run.stage)
        obj = LevelObjective(data, cfg, run.stage, run.level, run.fixed, threads)
        try:
            finished = _run_level(obj, sc, run, stop_after, checkpoint, cfg.checkpoint_every)
        finally:
            obj.close()
        if not finished:
            return _result(data, cfg, run, completed=False), run
        if log is not None:
            log(f"{run.stage} level {run.level}: loss {run.best:.6g} after {run.level_iter} iterations")
        _advance(data, cfg, stages, run)
        if checkpoint is not None:
            checkpoint(run)
    return _result(data, cfg, run), run


def _run_level(obj, sc, run, stop_after, checkpoint, every):
    params = sc.adam
    state = run.state
    loss, grads = obj(state.variables)
    if not math.isfinite(loss.total):
        raise DivergenceError(f"{run.stage} level {run.level}: loss is not finite")
    if run.level_iter == 0 and run.best == math.inf:
        # first visit of this level; a resumed run has already logged it
        run.best = loss.total
        run.trace.append(_trace_row(run, loss))
    while run.level_iter < params.max_iters:
        if loss.total <= sc.tol or run.stall >= sc.patience:
            break
        if stop_after is not None and run.global_iter >= stop_after:
            return False
        accepted = False
        for k in range(MAX_HALVINGS + 1):
            factor = run.lr_factor * 0.5**k
            trial = adam_step(state, grads, params, lr_factor=factor)
            t_loss, t_grads = obj(trial.variables)
            if math.isfinite(t_loss.total) and t_loss.total <= loss.total:
                accepted = True
                break
        if accepted:
            # later steps start from the accepted rate and recover slowly
            run.lr_factor = min(1.0, factor * LR_RECOVERY)
            improved = t_loss.total < loss.total
            state, loss, grads = trial, t_loss, t_grads
            run.stall = 0 if improved else run.stall + 1
        else:
            # keep the moments so the next step sees the new gradient history
            state = replace(state, m=trial.m, v=trial.v, iteration=trial.iteration)
            run.lr_factor = max(factor, MIN_LR_FACTOR)
            run.stall += 1
            if t_loss.total > DIVERGENCE_FACTOR * max(run.best, DIVERGENCE_FLOOR):
                raise DivergenceError(
                    f"{run.stage} level {run.level}: loss {t_loss.total:.4g} exceeds "
                    f"{DIVERGENCE_FACTOR:g}x best {run.best:.4g}"
                )
        run.best = min(run.best, loss.total)
        run.level_iter += 1
        run.global_iter += 1
        run.state = state
        run.trace.append(_trace_row(run, loss))
        if checkpoint is not None and every and run.global_iter % every == 0:
            checkpoint(run)
    run.state = state
    return True


def _trace_row(run, loss):
    return [run.global_iter] + [loss.as_dict()[t] for t in TERMS] + [loss.total, run.stage, run.level]


def _advance(data, cfg, stages, run):
    if run.level > 0:
        run.level -= 1
        h, w = data.frames[0].shape[:2]
        shape = (h >> run.level, w >> run.level)
        run.state = OptimState(_upsample_variables(run.state.variables, shape))
        if run.stage == "rigid":
            run.fixed = _refresh_fixed_rigid(data, cfg, run.fixed, run.level, shape)
        else:
            run.fixed = _frozen_rigid(run.rigid_result, run.level)
    else:
        if run.stage == "rigid":
            run.rigid_result = _rigid_from_state(run, data)
        idx = stages.index(run.stage)
        if idx + 1 >= len(stages):
            run.done = True
            return
        run.stage = stages[idx + 1]
        run.level, run.state, run.fixed = _start_stage(data, cfg, run.stage, run.rigid_result)
    run.level_iter = 0
    run.stall = 0
    run.best = math.inf
    run.lr_factor = 1.0


def _refresh_fixed_rigid(data, cfg, fixed, level, shape):
    """Fixed rigid variables at a new level; fixed depth is re-pooled from its source."""
    out = {}
    base, _ = initial_rigid_variables(data, replace(cfg, rigid=replace(
        cfg.rigid, optimize_depth=True, optimize_pose=True)), level)
    for k, x in fixed.items():
        if k.startswith("log_depth/") and cfg.rigid.init_depth.split()[0] == "gt":
            out[k] = base[k]
        elif k.startswith("log_depth/"):
            out[k] = upsample_to(x, shape)
        else:
            out[k] = x
    return out


def _result(data, cfg, run, completed=True):
    if run.rigid_result is not None:
        rigid = run.rigid_result
    else:
        rigid = _rigid_from_state(run, data) if run.stage == "rigid" and run.level == 0 else None
    if rigid is None:
        return RunResult([], [], [], [], [], [], [], [], list(run.trace), completed)
    out = RunResult(
        [d.copy() for d in rigid["depth"]],
        [np.asarray(p).copy() for p in rigid["pose"]],
        [], [], [], [], [], [], list(run.trace), completed,
    )
    has_res = run.stage == "residual" and run.level == 0
    final = LevelObjective(data, cfg, "residual", 0, _frozen_rigid(rigid, 0))
    variables = run.state.variables if has_res else {}
    pairs = final.pairs(variables)
    for k, pair in enumerate(pairs):
        mode = cfg.mask_mode
        ev = evaluate_pair(pair, data.K, cfg.weights, cfg.consistency,
                           stages=("residual",) if has_res else (), mask_mode=mode, need_grad=False)
        out.rigid_fwd.append(ev.rigid_fwd)
        out.rigid_bwd.append(ev.rigid_bwd)
        if has_res:
            out.residual_fwd.append(pair.residual_fwd.copy())
            out.residual_bwd.append(pair.residual_bwd.copy())
            out.mask_fwd.append(ev.mask_fwd)
            out.mask_bwd.append(ev.mask_bwd)
    return out


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, run):
    """Store a :class:`RunState` as ``.npz`` (arrays stored losslessly)."""
    arrays = {}
    for prefix, d in (("var", run.state.variables), ("m", run.state.m), ("v", run.state.v),
                      ("fixed", run.fixed)):
        for k, x in d.items():
            arrays[f"{prefix}:{k}"] = x
    if run.rigid_result is not None:
        for i, x in enumerate(run.rigid_result["depth"]):
            arrays[f"rigid_depth:{i}"] = x
        for i, x in enumerate(run.rigid_result["pose"]):
            arrays[f"rigid_pose:{i}"] = np.asarray(x)
    meta = np.array([run.stage, repr(run.level), repr(run.level_iter), repr(run.global_iter),
                     repr(run.state.iteration), repr(run.best), repr(run.stall), repr(run.done),
                     repr(run.lr_factor)])
    trace = np.array([[repr(v) if not isinstance(v, str) else v for v in row] for row in run.trace],
                     dtype=str).reshape(len(run.trace), len(TRACE_COLUMNS))
    arrays["__meta__"] = meta
    arrays["__trace__"] = trace
    # fixed entry timestamps keep identical states byte-identical on disk
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[key]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = [str(v) for v in z["__meta__"]]
        groups = {"var": {}, "m": {}, "v": {}, "fixed": {}, "rigid_depth": {}, "rigid_pose": {}}
        for key in z.files:
            if key.startswith("__"):
                continue
            prefix, name = key.split(":", 1)
            groups[prefix][name] = z[key].copy()
        trace = []
        for row in z["__trace__"]:
            r = [int(row[0])] + [float(v) for v in row[1:-2]] + [str(row[-2]), int(row[-1])]
            trace.append(r)
    state = OptimState(groups["var"], groups["m"], groups["v"], int(meta[4]))
    rigid = None
    if groups["rigid_depth"]:
        n = len(groups["rigid_depth"])
        rigid = {
            "depth": [groups["rigid_depth"][str(i)] for i in range(n)],
            "pose": [groups["rigid_pose"][str(i)] for i in range(len(groups["rigid_pose"]))],
        }
    return RunState(
        stage=meta[0], level=int(meta[1]), level_iter=int(meta[2]), global_iter=int(meta[3]),
        state=state, fixed=groups["fixed"], best=float(meta[5]), stall=int(meta[6]),
        trace=trace, done=meta[7] == "True", rigid_result=rigid, lr_factor=float(meta[8]),
    )


def pose_vectors(poses):
    """6-vectors of a list of :class:`PoseSE3` (or already-vectors)."""
    return [p.as_vector() if isinstance(p, PoseSE3) else np.asarray(p, dtype=np.float64) for p in poses]
