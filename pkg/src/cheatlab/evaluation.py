"""Transfer evaluation: mean distance before crash, plus belief strips.

Every method flies the same seeded gate-free cluttered rooms, one episode
per seed, and reports the odometer reading at the first crash or at the
step cap. Distance is path length, not displacement, so a policy that
circles safely still scores. Four pipelines are comparable: the
transferred policy behind the substitute encoder, a direct
observation-to-action regressor, a random-command flier, and a hovering
zero baseline.

The belief strip is the interpretation tool: for sampled steps of a real
flight it stacks what the drone actually saw over what the frozen decoder
says the substitute encoder believes, as one grayscale image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import container
from .cheat import CheatEncoderParams, cheat_encode
from .errors import ContractError, DimensionError, FormatError
from .expert import Dataset
from .policy import ControllerParams, RolloutResult, rollout
from .vae import VaeParams, decode
from .worldsim import (
    Action,
    DEFAULT_SIM,
    Observation,
    SimConfig,
    ZERO_ACTION,
    _derive_seed,
    clamp_action,
    render_observation,
    spawn_real_world,
    start_state,
    step_dynamics,
)

PIPELINES = ("cheat", "baseline", "random", "zero")


@dataclass
class BaselineParams:
    """Direct observation-to-action regressor (the non-cheating rival)."""

    params: ad.ParamSet
    hidden: tuple[int, ...]
    width: int


@dataclass(frozen=True)
class BaselineTrainConfig:
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-3
    hidden: tuple[int, ...] = (128, 64)
    seed: int = 0


@dataclass(frozen=True)
class EvalReport:
    """One method's episode ledger over a fixed seed suite."""

    method: str
    seeds: tuple[int, ...]
    odometers: tuple[float, ...]
    crashed: tuple[bool, ...]
    mean_distance: float
    episodes: int
    config: dict

    @property
    def crash_rate(self) -> float:
        return sum(self.crashed) / self.episodes


def baseline_init(
    hidden: tuple[int, ...], seed: int, width: int = 64
) -> BaselineParams:
    """Seeded init, same scheme as every other stack here."""
    if width < 1 or any(h < 1 for h in hidden):
        raise ContractError(f"bad architecture hidden={hidden} width={width}")
    rng = np.random.default_rng(seed)
    params = ad.ParamSet()
    sizes = [2 * width, *hidden, 4]
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        params.add(f"base/w{i}", rng.standard_normal((n_out, n_in)) / np.sqrt(n_in))
        params.add(f"base/b{i}", np.zeros(n_out))
    return BaselineParams(params, tuple(hidden), width)


def _baseline_traced(p: BaselineParams, x: ad.Tensor) -> ad.Tensor:
    h = x
    n_layers = len(p.hidden) + 1
    for i in range(n_layers):
        h = ad.affine(p.params[f"base/w{i}"], h, p.params[f"base/b{i}"])
        if i < n_layers - 1:
            h = ad.activation("tanh", h)
    return h


def baseline_action(
    p: BaselineParams, obs: Observation, cfg: SimConfig = DEFAULT_SIM
) -> Action:
    """Regressed command, clamped to the same envelope as any Action."""
    if obs.width != p.width:
        raise DimensionError(
            f"observation width {obs.width} does not match model width {p.width}"
        )
    y = _baseline_traced(p, ad.constant(obs.features())).data
    return clamp_action(Action(y[0], y[1], y[2], y[3]), cfg)


def train_baseline(
    real_data: Dataset, cfg: BaselineTrainConfig = BaselineTrainConfig()
) -> tuple[BaselineParams, list[float]]:
    """Behavioral cloning: minibatch Adam on expert action MSE."""
    if real_data.world_kind != "real":
        raise ContractError(
            f"the regression baseline trains on room data, got "
            f"{real_data.world_kind!r}"
        )
    xs, ys = [], []
    for episode in real_data.episodes:
        for step in episode:
            xs.append(step.observation.features())
            ys.append(
                (step.action.vx, step.action.vy, step.action.vz,
                 step.action.yaw_rate)
            )
    if not xs:
        raise ContractError("dataset holds no steps")
    x_all = np.stack(xs)
    y_all = np.array(ys, dtype=np.float64)
    p = baseline_init(cfg.hidden, cfg.seed, width=real_data.episodes[0][0].observation.width)
    n = x_all.shape[0]
    rng = np.random.default_rng(_derive_seed(cfg.seed, "baseline-train"))
    opt = ad.Adam(ad.AdamConfig(lr=cfg.lr))
    history: list[float] = []
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for at in range(0, n, cfg.batch):
            idx = order[at : at + cfg.batch]
            pred = _baseline_traced(p, ad.constant(x_all[idx]))
            loss = ad.mse(pred, ad.constant(y_all[idx]))
            grads = ad.backward(loss, p.params)
            opt.step(p.params, grads)
            total += loss.item() * len(idx)
        history.append(total / n)
    return p, history


def save_baseline(
    p: BaselineParams, path, extra_meta: dict | None = None
) -> str:
    meta = {"hidden": list(p.hidden), "width": p.width}
    meta.update(extra_meta or {})
    return container.save_checkpoint(path, "baseline", p.params, meta)


def load_baseline(path) -> BaselineParams:
    ckpt = container.load_checkpoint(path)
    if ckpt.stage != "baseline":
        raise FormatError(f"expected a baseline checkpoint, got {ckpt.stage!r}")
    meta = ckpt.metadata
    return BaselineParams(
        ckpt.params, tuple(meta["hidden"]), int(meta["width"])
    )


# ---------------------------------------------------------------------------
# episode running


def _random_commands(seed: int, max_steps: int, hold_steps: int,
                     cfg: SimConfig) -> np.ndarray:
    """Piecewise-constant random commands, one row per step.

    Holding each draw for a stretch of steps makes the flier actually go
    somewhere; per-step jitter would mostly vibrate in place yet still rack
    up path length, which would wreck the random baseline's meaning.
    """
    rng = np.random.default_rng(_derive_seed(seed, "random-policy"))
    n_cmd = -(-max_steps // hold_steps)
    lo = [-cfg.v_max, -cfg.v_max, -cfg.v_max, -cfg.yaw_rate_max]
    hi = [cfg.v_max, cfg.v_max, cfg.v_max, cfg.yaw_rate_max]
    cmds = rng.uniform(lo, hi, size=(n_cmd, 4))
    return np.repeat(cmds, hold_steps, axis=0)[:max_steps]


def _require_model(models: dict, key: str, kind: type):
    if not isinstance(models, dict) or key not in models:
        raise ContractError(f"pipeline needs a {key!r} model")
    model = models[key]
    if not isinstance(model, kind):
        raise ContractError(
            f"model {key!r} should be {kind.__name__}, got "
            f"{type(model).__name__}"
        )
    return model


def eval_mean_distance(
    pipeline: str,
    models: dict | None,
    seeds: list[int],
    max_steps: int = 2000,
    density: float = 0.4,
    hold_steps: int = 20,
    cfg: SimConfig = DEFAULT_SIM,
) -> EvalReport:
    """Fly one episode per seed in gate-free rooms and tally odometers.

    Episodes end at the first crash or at max_steps; the odometer reading
    at that moment is the episode's distance. Everything is seeded, so a
    repeat call reproduces the report bit for bit.
    """
    if pipeline not in PIPELINES:
        raise ContractError(f"unknown pipeline {pipeline!r}")
    if not seeds:
        raise ContractError("no evaluation seeds")
    if max_steps < 1:
        raise ContractError(f"max_steps {max_steps} < 1")
    models = models or {}
    if pipeline == "cheat":
        cheat = _require_model(models, "cheat", CheatEncoderParams)
        vae = _require_model(models, "vae", VaeParams)
        ctrl = _require_model(models, "controller", ControllerParams)
    elif pipeline == "baseline":
        base = _require_model(models, "baseline", BaselineParams)

    odometers: list[float] = []
    crashes: list[bool] = []
    for seed in seeds:
        world = spawn_real_world(seed, density, cfg=cfg, with_gates=False)
        if pipeline == "cheat":
            result = rollout(
                world, vae, ctrl, max_steps, encoder="cheat", cheat=cheat,
                cfg=cfg,
            )
            state = result.final_state
        else:
            state = start_state(world)
            if pipeline == "random":
                cmds = _random_commands(seed, max_steps, hold_steps, cfg)
            for t in range(max_steps):
                if pipeline == "zero":
                    act = ZERO_ACTION
                elif pipeline == "random":
                    act = Action(*cmds[t])
                else:
                    act = baseline_action(
                        base, render_observation(world, state, cfg), cfg
                    )
                state = step_dynamics(world, state, act, cfg.dt, cfg)
                if state.crashed:
                    break
        odometers.append(state.odometer)
        crashes.append(state.crashed)
    config = {"max_steps": max_steps, "density": density}
    if pipeline == "random":
        config["hold_steps"] = hold_steps
    return EvalReport(
        method=pipeline,
        seeds=tuple(int(s) for s in seeds),
        odometers=tuple(odometers),
        crashed=tuple(crashes),
        mean_distance=float(np.mean(odometers)),
        episodes=len(seeds),
        config=config,
    )


# ---------------------------------------------------------------------------
# reporting


def comparison_report(reports: list[EvalReport]) -> tuple[str, str]:
    """Render reports as an aligned text table and a CSV string.

    Rows are sorted by method name so output is byte-stable; CSV floats
    use repr and survive a parse roundtrip at full precision.
    """
    if not reports:
        raise ContractError("no reports to compare")
    suite = reports[0].seeds
    for r in reports[1:]:
        if r.seeds != suite:
            raise ContractError(
                f"seed suites differ between {reports[0].method!r} and "
                f"{r.method!r}; comparison would not be apples to apples"
            )
    rows = sorted(reports, key=lambda r: r.method)
    header = ("method", "mean_distance_m", "crash_rate", "episodes")
    cells = [
        (r.method, repr(r.mean_distance), repr(r.crash_rate), str(r.episodes))
        for r in rows
    ]
    widths = [
        max(len(header[j]), *(len(c[j]) for c in cells))
        for j in range(len(header))
    ]
    def fmt(row):
        left = row[0].ljust(widths[0])
        rest = "  ".join(v.rjust(w) for v, w in zip(row[1:], widths[1:]))
        return f"{left}  {rest}"

    text = "\n".join([fmt(header), *(fmt(c) for c in cells)]) + "\n"
    csv = "\n".join([",".join(header), *(",".join(c) for c in cells)]) + "\n"
    return text, csv


# ---------------------------------------------------------------------------
# belief strips


def render_belief_strip(
    trace,
    cheat: CheatEncoderParams,
    vae: VaeParams,
    stride: int,
    path,
    band_height: int = 8,
) -> bytes:
    """Write a PGM strip: what was seen on top, what is believed below.

    Every stride-th step contributes one tile of the scan width. The top
    band encodes the real observation as class level (0, 1/2, 1 for free,
    gate, obstacle) times depth; the bottom band decodes the substitute
    encoder's latent through the frozen decoder and shows its class
    channel times its depth channel on the same scale. Returns the bytes
    written; identical inputs produce identical files.
    """
    steps = trace.steps if isinstance(trace, RolloutResult) else list(trace)
    if stride < 1:
        raise ContractError(f"stride {stride} < 1")
    if band_height < 1:
        raise ContractError(f"band_height {band_height} < 1")
    if not steps:
        raise ContractError("empty trace")
    sampled = steps[::stride]
    width = sampled[0].observation.width
    top = np.empty((len(sampled), width))
    bottom = np.empty((len(sampled), width))
    for i, step in enumerate(sampled):
        obs = step.observation
        top[i] = (obs.classes * 0.5) * obs.depth
        belief = decode(vae, cheat_encode(cheat, obs))
        bottom[i] = belief.class_channel * belief.depth_channel
    tiles_top = np.repeat(top, band_height, axis=0).reshape(
        len(sampled), band_height, width
    )
    tiles_bottom = np.repeat(bottom, band_height, axis=0).reshape(
        len(sampled), band_height, width
    )
    # Tiles side by side: rows are the two bands, columns n_tiles * width.
    img = np.concatenate(
        [
            np.concatenate(list(tiles_top), axis=1),
            np.concatenate(list(tiles_bottom), axis=1),
        ],
        axis=0,
    )
    gray = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    header = (
        "P5\n"
        "# top band: rendered scan, gray = class level (free 0, gate 1/2,\n"
        "# obstacle 1) x depth. bottom band: frozen decoder view of the\n"
        "# substitute encoder's latent, gray = class channel x depth channel.\n"
        f"# {len(sampled)} tile(s) of width {width}, band height {band_height}.\n"
        f"{w} {h}\n255\n"
    ).encode("ascii")
    blob = header + gray.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob
