"""Substitute perception front-end trained on paired scenes.

Transfer without touching the policy: freeze the autoencoder and the
controller, then train a fresh dense encoder so that cluttered-room
observations map to the latent codes the frozen pipeline expects from
the corridor world it grew up in. Supervision pairs every real-world
rendering with the frozen encoder's posterior mean for a minimal matched
scene that contains nothing but the chosen gate.

Two pairing modes exist. gates_visible drops actual gates into the
cluttered rooms and supervises toward the nearest one ahead, so the gate
geometry appears in the real rendering. virtual_gate keeps the rooms
gate-free and aims the target at the widest-gap opening instead, which is
what lets the transferred policy fly rooms that contain no gates at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import container
from .errors import (
    ContractError,
    DimensionError,
    FormatError,
    FrozenWeightError,
    GenerationError,
    IntegrityError,
)
from .policy import ControllerParams
from .vae import VaeParams, encode
from .worldsim import (
    DEFAULT_SIM,
    DroneState,
    Gate,
    Observation,
    SimConfig,
    WorldSpec,
    _derive_seed,
    render_observation,
    spawn_real_world,
    start_state,
    virtual_gate,
    wrap_angle,
)

PAIR_MODES = ("virtual_gate", "gates_visible")


@dataclass
class CheatEncoderParams:
    """Dense stack from a flattened observation to a predicted latent."""

    params: ad.ParamSet
    k: int
    hidden: tuple[int, ...]
    width: int


@dataclass(frozen=True)
class CheatTrainConfig:
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-3
    hidden: tuple[int, ...] = (128, 64)
    seed: int = 0


@dataclass(frozen=True)
class PairedSample:
    """One supervision pair plus the pose and gate it was built from.

    pose is (x, y, z, yaw); together with gate it is enough to rebuild
    the matched scene and recompute target_mu from scratch.
    """

    real_obs: Observation
    target_mu: np.ndarray
    pose: tuple[float, float, float, float]
    gate: Gate


def cheat_init(
    k: int, hidden: tuple[int, ...], seed: int, width: int = 64
) -> CheatEncoderParams:
    """Seeded init matching the autoencoder's: N(0, 1/fan_in), zero biases."""
    if k < 1 or width < 1 or any(h < 1 for h in hidden):
        raise ContractError(f"bad architecture k={k} hidden={hidden} width={width}")
    rng = np.random.default_rng(seed)
    params = ad.ParamSet()
    sizes = [2 * width, *hidden, k]
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        params.add(f"cheat/w{i}", rng.standard_normal((n_out, n_in)) / np.sqrt(n_in))
        params.add(f"cheat/b{i}", np.zeros(n_out))
    return CheatEncoderParams(params, k, tuple(hidden), width)


def _forward_traced(p: CheatEncoderParams, x: ad.Tensor) -> ad.Tensor:
    h = x
    n_layers = len(p.hidden) + 1
    for i in range(n_layers):
        h = ad.affine(p.params[f"cheat/w{i}"], h, p.params[f"cheat/b{i}"])
        if i < n_layers - 1:
            h = ad.activation("tanh", h)
    return h


def cheat_encode(p: CheatEncoderParams, obs: Observation) -> np.ndarray:
    """Predicted corridor-world latent for a cluttered-room observation."""
    if obs.width != p.width:
        raise DimensionError(
            f"observation width {obs.width} does not match model width {p.width}"
        )
    return _forward_traced(p, ad.constant(obs.features())).data.copy()


# ---------------------------------------------------------------------------
# pair construction


def matched_fake_observation(
    gate: Gate, state: DroneState, cfg: SimConfig = DEFAULT_SIM
) -> Observation:
    """Render the minimal corridor-style scene: one gate, nothing else.

    The scene keeps the absolute pose and gate placement, so the relative
    geometry is untouched; the bounding walls sit beyond scan range and
    therefore never show up in the rendering.
    """
    pad = cfg.d_max + 5.0
    xs = (state.position[0], gate.center[0])
    ys = (state.position[1], gate.center[1])
    reach = gate.half_width + gate.frame_thickness
    bounds = (
        min(xs) - reach - pad,
        min(ys) - reach - pad,
        max(xs) + reach + pad,
        max(ys) + reach + pad,
    )
    scene = WorldSpec(
        kind="fake",
        bounds=bounds,
        obstacles=(),
        gates=(gate,),
        seed=0,
        start=(state.position[0], state.position[1], state.position[2], state.yaw),
    )
    return render_observation(scene, state, cfg)


def _nearest_forward_gate(
    world: WorldSpec, state: DroneState, cfg: SimConfig
) -> Gate | None:
    """Nearest placed gate inside the scan cone, or None."""
    half_fov = np.deg2rad(cfg.fov_deg) / 2.0
    best = None
    best_dist = np.inf
    for gate in world.gates:
        dx = gate.center[0] - state.position[0]
        dy = gate.center[1] - state.position[1]
        dist = float(np.hypot(dx, dy))
        bearing = wrap_angle(np.arctan2(dy, dx) - state.yaw)
        if dist > cfg.d_max or abs(bearing) > half_fov:
            continue
        if dist < best_dist:
            best, best_dist = gate, dist
    return best


def build_pairs(
    real_seed: int,
    n_poses: int,
    vae: VaeParams,
    mode: str = "virtual_gate",
    density: float = 0.4,
    cfg: SimConfig = DEFAULT_SIM,
) -> list[PairedSample]:
    """Collect supervision pairs from seeded cluttered rooms.

    Each pose is the collision-free start of its own seeded room, so the
    sample stream is deterministic in (real_seed, mode) and poses never
    share clutter. A pose is rejected when no gate qualifies: no gap wide
    enough in virtual_gate mode, or no placed gate inside the scan cone in
    gates_visible mode. More than 10x n_poses rejections aborts.
    """
    if n_poses < 1:
        raise ContractError(f"n_poses {n_poses} < 1")
    if mode not in PAIR_MODES:
        raise ContractError(f"unknown pairing mode {mode!r}")
    pairs: list[PairedSample] = []
    attempts = 0
    cap = 10 * n_poses
    while len(pairs) < n_poses:
        if attempts >= cap:
            raise GenerationError(
                f"rejected too many poses ({attempts} attempts for "
                f"{len(pairs)}/{n_poses} pairs in mode {mode!r})"
            )
        world_seed = _derive_seed(real_seed, "pair-world", attempts)
        attempts += 1
        world = spawn_real_world(
            world_seed, density, cfg=cfg, with_gates=(mode == "gates_visible")
        )
        state = start_state(world)
        if mode == "virtual_gate":
            gate = virtual_gate(world, state, cfg)
        else:
            gate = _nearest_forward_gate(world, state, cfg)
        if gate is None:
            continue
        real_obs = render_observation(world, state, cfg)
        mu, _ = encode(vae, matched_fake_observation(gate, state, cfg))
        if not np.all(np.isfinite(mu)):
            raise GenerationError("frozen encoder produced a non-finite target")
        pose = (state.position[0], state.position[1], state.position[2], state.yaw)
        pairs.append(PairedSample(real_obs, mu, pose, gate))
    return pairs


# ---------------------------------------------------------------------------
# training


def cheat_loss(p: CheatEncoderParams, pairs: list[PairedSample]) -> float:
    """Mean squared latent error over a pair list (the training objective)."""
    if not pairs:
        raise ContractError("no pairs to evaluate")
    x = np.stack([s.real_obs.features() for s in pairs])
    y = np.stack([s.target_mu for s in pairs])
    pred = _forward_traced(p, ad.constant(x)).data
    return float(np.mean((pred - y) ** 2))


def train_cheat(
    pairs: list[PairedSample],
    frozen: tuple[VaeParams, ControllerParams],
    cfg: CheatTrainConfig = CheatTrainConfig(),
) -> tuple[CheatEncoderParams, list[float], dict[str, str]]:
    """Fit the substitute encoder; everything downstream stays frozen.

    The frozen pair is passed in only so its digests can be recorded
    before training and verified after, turning "we did not touch the
    policy" into a checkable claim. Returns (params, per-epoch mean loss,
    frozen digests).
    """
    if not pairs:
        raise ContractError("cannot train on an empty pair list")
    vae, ctrl = frozen
    digests = {
        "vae": container.params_digest(vae.params),
        "controller": container.params_digest(ctrl.params),
    }
    width = pairs[0].real_obs.width
    for s in pairs:
        if s.real_obs.width != width or s.target_mu.shape != (vae.k,):
            raise ContractError("pair list mixes widths or latent sizes")
    x_all = np.stack([s.real_obs.features() for s in pairs])
    y_all = np.stack([s.target_mu for s in pairs])
    p = cheat_init(vae.k, cfg.hidden, cfg.seed, width)
    n = x_all.shape[0]
    rng = np.random.default_rng(_derive_seed(cfg.seed, "cheat-train"))
    opt = ad.Adam(ad.AdamConfig(lr=cfg.lr))
    history: list[float] = []
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for at in range(0, n, cfg.batch):
            idx = order[at : at + cfg.batch]
            pred = _forward_traced(p, ad.constant(x_all[idx]))
            loss = ad.mse(pred, ad.constant(y_all[idx]))
            grads = ad.backward(loss, p.params)
            opt.step(p.params, grads)
            total += loss.item() * len(idx)
        history.append(total / n)
    after = {
        "vae": container.params_digest(vae.params),
        "controller": container.params_digest(ctrl.params),
    }
    if after != digests:
        raise FrozenWeightError(
            "frozen parameters changed during encoder training: "
            f"{digests} -> {after}"
        )
    return p, history, digests


# ---------------------------------------------------------------------------
# persistence


def write_pairs(path, pairs: list[PairedSample], meta: dict | None = None) -> str:
    """Persist a pair list; arrays are stacked across samples."""
    if not pairs:
        raise ContractError("refusing to write an empty pair list")
    k = pairs[0].target_mu.shape[0]
    records = {
        "classes": np.stack([s.real_obs.classes for s in pairs]).astype(np.float64),
        "depth": np.stack([s.real_obs.depth for s in pairs]),
        "target_mu": np.stack([s.target_mu for s in pairs]),
        "poses": np.array([s.pose for s in pairs], dtype=np.float64),
        "gates": np.array(
            [
                (*s.gate.center, s.gate.yaw, s.gate.half_width, s.gate.frame_thickness)
                for s in pairs
            ],
            dtype=np.float64,
        ),
    }
    info = {
        "kind": "pairs",
        "count": len(pairs),
        "width": pairs[0].real_obs.width,
        "k": k,
    }
    info.update(meta or {})
    return container.write_container(path, records, info)


def read_pairs(path) -> tuple[list[PairedSample], dict]:
    records, meta = container.read_container(path)
    if meta.get("kind") != "pairs":
        raise IntegrityError(f"not a pair container: kind={meta.get('kind')!r}")
    needed = ("classes", "depth", "target_mu", "poses", "gates")
    if any(name not in records for name in needed):
        raise IntegrityError("pair container is missing arrays")
    classes = records["classes"]
    count = int(meta.get("count", -1))
    if classes.shape[0] != count:
        raise IntegrityError(
            f"pair count {classes.shape[0]} does not match manifest {count}"
        )
    pairs = []
    for i in range(count):
        obs = Observation(
            classes[i].astype(np.int64), records["depth"][i].copy()
        )
        g = records["gates"][i]
        gate = Gate(
            center=(g[0], g[1], g[2]),
            yaw=g[3],
            half_width=g[4],
            frame_thickness=g[5],
        )
        pairs.append(
            PairedSample(
                obs,
                records["target_mu"][i].copy(),
                tuple(records["poses"][i]),
                gate,
            )
        )
    return pairs, meta


def save_cheat(
    p: CheatEncoderParams,
    path,
    frozen_digests: dict[str, str] | None = None,
    extra_meta: dict | None = None,
) -> str:
    """Checkpoint the encoder; frozen digests ride along in the metadata."""
    meta = {"k": p.k, "hidden": list(p.hidden), "width": p.width}
    if frozen_digests:
        meta["frozen"] = dict(frozen_digests)
    meta.update(extra_meta or {})
    return container.save_checkpoint(path, "cheat", p.params, meta)


def load_cheat(path) -> CheatEncoderParams:
    ckpt = container.load_checkpoint(path)
    if ckpt.stage != "cheat":
        raise FormatError(f"expected a cheat checkpoint, got {ckpt.stage!r}")
    meta = ckpt.metadata
    return CheatEncoderParams(
        ckpt.params, int(meta["k"]), tuple(meta["hidden"]), int(meta["width"])
    )
