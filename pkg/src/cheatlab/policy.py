"""Recurrent flight controller and its evolutionary trainer.

The controller is a single LSTM cell over the latent code followed by a
dense stack on concat(z, h'); the four outputs are scaled to the command
bounds and clamped. It is trained without gradients: genomes are the
flattened parameter vectors, selection is elitist, and variation is
Gaussian mutation of uniformly chosen elites.

Fitness evaluators receive the whole population per generation (a list of
genome vectors, returning one score each). That lets the imitation
evaluator precompute the latent sequence once, since z never depends on
the genome, and batch the population through each timestep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import container
from .autodiff import ParamSet
from .errors import ContractError, DimensionError, EvolutionError, FormatError
from .expert import Dataset
from .vae import VaeParams, encode
from .worldsim import (
    Action,
    DEFAULT_SIM,
    DroneState,
    Observation,
    SimConfig,
    WorldSpec,
    count_gates_passed,
    render_observation,
    spawn_fake_world,
    start_state,
    step_dynamics,
)

INIT_SIGMA = 0.1  # evolution seeds genomes from N(0, INIT_SIGMA^2)

_GATES = ("i", "f", "o", "g")


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class ControllerParams:
    params: ParamSet
    k: int
    h_dim: int
    mlp_hidden: tuple[int, int]
    out_scale: np.ndarray  # (v_max, v_max, v_max, yaw_rate_max)


def controller_template(
    k: int = 8,
    h_dim: int = 16,
    mlp_hidden: tuple[int, int] = (32, 16),
    cfg: SimConfig = DEFAULT_SIM,
) -> ControllerParams:
    """All-zero controller fixing the shapes and genome layout."""
    if k < 1 or h_dim < 1 or len(mlp_hidden) != 2:
        raise ContractError(
            f"bad controller architecture k={k} h_dim={h_dim} mlp={mlp_hidden}"
        )
    params = ParamSet()
    for gate in _GATES:
        params.add(f"lstm/w{gate}", np.zeros((h_dim, k)))
        params.add(f"lstm/u{gate}", np.zeros((h_dim, h_dim)))
        params.add(f"lstm/b{gate}", np.zeros(h_dim))
    sizes = [k + h_dim, mlp_hidden[0], mlp_hidden[1], 4]
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        params.add(f"mlp/w{i}", np.zeros((n_out, n_in)))
        params.add(f"mlp/b{i}", np.zeros(n_out))
    out_scale = np.array([cfg.v_max, cfg.v_max, cfg.v_max, cfg.yaw_rate_max])
    return ControllerParams(params, k, h_dim, tuple(mlp_hidden), out_scale)


def zero_state(p: ControllerParams) -> LstmState:
    return LstmState(np.zeros(p.h_dim), np.zeros(p.h_dim))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def controller_step(
    p: ControllerParams, z: np.ndarray, st: LstmState
) -> tuple[Action, LstmState]:
    """One control tick: standard LSTM cell, then the dense head.

    i, f, o are sigmoid gates and g the tanh candidate; c' = f*c + i*g and
    h' = o * tanh(c'). The head reads concat(z, h') through two tanh
    layers, a linear output scaled by out_scale, then a clamp to the same
    bounds. All-zero parameters therefore command exactly zero.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (p.k,):
        raise DimensionError(f"latent dims {list(z.shape)} do not match k={p.k}")
    if st.h.shape != (p.h_dim,) or st.c.shape != (p.h_dim,):
        raise DimensionError(
            f"state dims {list(st.h.shape)}/{list(st.c.shape)} do not match "
            f"h_dim={p.h_dim}"
        )
    pp = p.params
    pre = {
        gate: pp[f"lstm/w{gate}"].data @ z
        + pp[f"lstm/u{gate}"].data @ st.h
        + pp[f"lstm/b{gate}"].data
        for gate in _GATES
    }
    i = _sigmoid(pre["i"])
    f = _sigmoid(pre["f"])
    o = _sigmoid(pre["o"])
    g = np.tanh(pre["g"])
    c = f * st.c + i * g
    h = o * np.tanh(c)
    y = np.concatenate([z, h])
    y = np.tanh(pp["mlp/w0"].data @ y + pp["mlp/b0"].data)
    y = np.tanh(pp["mlp/w1"].data @ y + pp["mlp/b1"].data)
    y = pp["mlp/w2"].data @ y + pp["mlp/b2"].data
    out = np.clip(y * p.out_scale, -p.out_scale, p.out_scale)
    action = Action(float(out[0]), float(out[1]), float(out[2]), float(out[3]))
    return action, LstmState(h, c)


# ---------------------------------------------------------------------------
# genome codec


@dataclass
class Genome:
    values: np.ndarray
    fitness: float | None = None


def genome_size(p: ControllerParams) -> int:
    return p.params.total_size()


def genome_from_controller(p: ControllerParams) -> np.ndarray:
    """Flatten in ParamSet insertion order, row-major per tensor."""
    return p.params.flatten()


def controller_from_genome(
    values: np.ndarray, template: ControllerParams
) -> ControllerParams:
    """Inverse of genome_from_controller; the template is not mutated."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (genome_size(template),):
        raise ContractError(
            f"genome length {values.size} does not match parameter count "
            f"{genome_size(template)}"
        )
    params = template.params.copy()
    params.set_flat(values)
    return ControllerParams(
        params,
        template.k,
        template.h_dim,
        template.mlp_hidden,
        template.out_scale.copy(),
    )


# ---------------------------------------------------------------------------
# fitness


def fitness_imitation(
    genome: np.ndarray | Genome,
    vae: VaeParams,
    data: Dataset,
    template: ControllerParams | None = None,
) -> float:
    """Negative mean squared action error against the recorded expert.

    Observations are teacher-forced through the frozen encoder mean; the
    LSTM state resets at every episode boundary. The value is the mean
    over every recorded step and all four action components, negated so
    greater is better.
    """
    values = genome.values if isinstance(genome, Genome) else genome
    if data.world_kind != "fake" or not data.episodes:
        raise ContractError("imitation fitness needs a nonempty corridor dataset")
    if template is None:
        template = controller_template(k=vae.k)
    ctrl = controller_from_genome(values, template)
    total = 0.0
    count = 0
    for ep in data.episodes:
        st = zero_state(ctrl)
        for step in ep:
            mu, _ = encode(vae, step.observation)
            act, st = controller_step(ctrl, mu, st)
            want = step.action
            total += (
                (act.vx - want.vx) ** 2
                + (act.vy - want.vy) ** 2
                + (act.vz - want.vz) ** 2
                + (act.yaw_rate - want.yaw_rate) ** 2
            )
            count += 4
    return -total / count


class ImitationEvaluator:
    """Population-batched imitation fitness, numerically equal to
    fitness_imitation on every genome (up to float reassociation)."""

    def __init__(self, vae: VaeParams, data: Dataset,
                 template: ControllerParams):
        if data.world_kind != "fake" or not data.episodes:
            raise ContractError(
                "imitation fitness needs a nonempty corridor dataset"
            )
        self.template = template
        self.episodes = []
        for ep in data.episodes:
            zs = np.stack([encode(vae, s.observation)[0] for s in ep])
            acts = np.array(
                [(s.action.vx, s.action.vy, s.action.vz, s.action.yaw_rate)
                 for s in ep]
            )
            self.episodes.append((zs, acts))
        self.total_count = 4 * sum(len(a) for _, a in self.episodes)

    def _unpack(self, genomes: list[np.ndarray]):
        t = self.template
        stacked = {}
        flat = np.stack([np.asarray(g, dtype=np.float64) for g in genomes])
        if flat.shape[1] != genome_size(t):
            raise ContractError(
                f"genome length {flat.shape[1]} does not match parameter "
                f"count {genome_size(t)}"
            )
        at = 0
        for name, tensor in t.params.items():
            n = tensor.data.size
            stacked[name] = flat[:, at : at + n].reshape(
                (len(genomes), *tensor.data.shape)
            )
            at += n
        return stacked

    def __call__(self, genomes: list[np.ndarray]) -> np.ndarray:
        w = self._unpack(genomes)
        pop = len(genomes)
        t = self.template
        err = np.zeros(pop)
        for zs, acts in self.episodes:
            h = np.zeros((pop, t.h_dim))
            c = np.zeros((pop, t.h_dim))
            zw = {
                gate: np.einsum("tk,phk->tph", zs, w[f"lstm/w{gate}"])
                for gate in _GATES
            }
            for at in range(len(zs)):
                pre = {
                    gate: zw[gate][at]
                    + np.einsum("pij,pj->pi", w[f"lstm/u{gate}"], h)
                    + w[f"lstm/b{gate}"]
                    for gate in _GATES
                }
                i = _sigmoid(pre["i"])
                f = _sigmoid(pre["f"])
                o = _sigmoid(pre["o"])
                g = np.tanh(pre["g"])
                c = f * c + i * g
                h = o * np.tanh(c)
                y = np.concatenate(
                    [np.broadcast_to(zs[at], (pop, t.k)), h], axis=1
                )
                y = np.tanh(
                    np.einsum("poi,pi->po", w["mlp/w0"], y) + w["mlp/b0"]
                )
                y = np.tanh(
                    np.einsum("poi,pi->po", w["mlp/w1"], y) + w["mlp/b1"]
                )
                y = np.einsum("poi,pi->po", w["mlp/w2"], y) + w["mlp/b2"]
                out = np.clip(y * t.out_scale, -t.out_scale, t.out_scale)
                err += np.sum((out - acts[at]) ** 2, axis=1)
        return -err / self.total_count


def fitness_reward(
    genome: np.ndarray | Genome,
    vae: VaeParams,
    seeds: list[int],
    max_steps: int = 1000,
    gate_bonus: float = 5.0,
    cfg: SimConfig = DEFAULT_SIM,
    template: ControllerParams | None = None,
) -> float:
    """Mean over seeded corridors of odometer plus a bonus per gate passed."""
    values = genome.values if isinstance(genome, Genome) else genome
    if not seeds:
        raise ContractError("reward fitness needs at least one seed")
    if template is None:
        template = controller_template(k=vae.k, cfg=cfg)
    ctrl = controller_from_genome(values, template)
    total = 0.0
    for seed in seeds:
        world = spawn_fake_world(seed, cfg=cfg)
        result = rollout(world, vae, ctrl, max_steps, cfg=cfg)
        positions = [
            (s.state.position[0], s.state.position[1]) for s in result.steps
        ]
        positions.append(
            (result.final_state.position[0], result.final_state.position[1])
        )
        total += result.odometer + gate_bonus * count_gates_passed(
            world, positions
        )
    return total / len(seeds)


class RewardEvaluator:
    """Per-genome rollouts under a fixed seed list; population interface."""

    def __init__(self, vae: VaeParams, seeds: list[int], max_steps: int = 1000,
                 gate_bonus: float = 5.0, cfg: SimConfig = DEFAULT_SIM,
                 template: ControllerParams | None = None):
        self.vae = vae
        self.seeds = seeds
        self.max_steps = max_steps
        self.gate_bonus = gate_bonus
        self.cfg = cfg
        self.template = template

    def __call__(self, genomes: list[np.ndarray]) -> np.ndarray:
        return np.array(
            [
                fitness_reward(
                    g, self.vae, self.seeds, self.max_steps,
                    self.gate_bonus, self.cfg, self.template,
                )
                for g in genomes
            ]
        )


# ---------------------------------------------------------------------------
# evolution


@dataclass(frozen=True)
class EvolutionConfig:
    population: int = 64
    elites: int = 8
    mutation_sigma: float = 0.02
    generations: int = 150
    seed: int = 0
    fitness_kind: str = "imitation"  # or "reward"

    def validate(self) -> None:
        if self.population < 2:
            raise ContractError(f"population {self.population} < 2")
        if not (1 <= self.elites < self.population):
            raise ContractError(
                f"elites {self.elites} outside [1, {self.population})"
            )
        if self.mutation_sigma <= 0 or self.generations < 1:
            raise ContractError(
                f"bad sigma {self.mutation_sigma} or generations "
                f"{self.generations}"
            )
        if self.fitness_kind not in ("imitation", "reward"):
            raise ContractError(f"unknown fitness kind {self.fitness_kind!r}")


@dataclass
class GenerationStats:
    generation: int
    best: float
    mean: float


def evolve(
    cfg: EvolutionConfig,
    fitness,
    dim: int,
) -> tuple[Genome, list[GenerationStats]]:
    """Elitist evolution over flat genomes.

    The population seeds from N(0, INIT_SIGMA^2). Each generation scores
    everyone (fitness takes the list of genome vectors and returns one
    float each), keeps the `elites` best with ties broken toward the lower
    genome index, and refills by mutating uniformly drawn elites with
    N(0, mutation_sigma^2) noise. Elites carry over unchanged, so the
    per-generation best never decreases and the best genome is never lost.
    Non-finite fitness aborts with the offending genome index.
    """
    cfg.validate()
    if dim < 1:
        raise ContractError(f"genome dimension {dim} < 1")
    rng = np.random.default_rng(cfg.seed)
    pop = rng.normal(0.0, INIT_SIGMA, (cfg.population, dim))
    history: list[GenerationStats] = []
    best_genome: np.ndarray | None = None
    best_fit = -math.inf
    for gen in range(cfg.generations):
        fit = np.asarray(fitness(list(pop)), dtype=np.float64)
        if fit.shape != (cfg.population,):
            raise EvolutionError(
                f"fitness returned {fit.shape}, wanted ({cfg.population},)"
            )
        if not np.all(np.isfinite(fit)):
            bad = int(np.flatnonzero(~np.isfinite(fit))[0])
            raise EvolutionError(
                f"non-finite fitness {fit[bad]} for genome {bad} "
                f"in generation {gen}"
            )
        order = np.argsort(-fit, kind="stable")  # stable: ties keep low index
        if fit[order[0]] > best_fit:
            best_fit = float(fit[order[0]])
            best_genome = pop[order[0]].copy()
        history.append(
            GenerationStats(gen, float(fit[order[0]]), float(fit.mean()))
        )
        elites = pop[order[: cfg.elites]]
        parents = elites[rng.integers(0, cfg.elites, cfg.population - cfg.elites)]
        children = parents + rng.normal(
            0.0, cfg.mutation_sigma, (cfg.population - cfg.elites, dim)
        )
        pop = np.vstack([elites, children])
    assert best_genome is not None
    return Genome(best_genome, best_fit), history


# ---------------------------------------------------------------------------
# closed-loop rollout


@dataclass
class RolloutStep:
    state: DroneState
    observation: Observation
    action: Action


@dataclass
class RolloutResult:
    steps: list[RolloutStep]
    final_state: DroneState
    odometer: float
    crashed: bool


def rollout(
    world: WorldSpec,
    vae: VaeParams,
    ctrl: ControllerParams,
    max_steps: int,
    encoder: str = "vae",
    cheat=None,
    cfg: SimConfig = DEFAULT_SIM,
) -> RolloutResult:
    """Fly the controller closed-loop from the world's start pose.

    encoder "vae" feeds the frozen encoder mean and requires a corridor
    world; encoder "cheat" feeds the substitute encoder (pass its params
    as `cheat`) and requires a cluttered world. Stops at max_steps or on
    the first crash.
    """
    if encoder == "vae":
        if world.kind != "fake":
            raise ContractError("the vae encoder rolls out in corridor worlds")
    elif encoder == "cheat":
        if world.kind != "real":
            raise ContractError("the cheat encoder rolls out in room worlds")
        if cheat is None:
            raise ContractError("cheat rollout needs encoder parameters")
    else:
        raise ContractError(f"unknown encoder {encoder!r}")
    if max_steps < 1:
        raise ContractError(f"max_steps {max_steps} < 1")
    if encoder == "cheat":
        from .cheat import cheat_encode  # local import to avoid a cycle

    state = start_state(world)
    st = zero_state(ctrl)
    steps: list[RolloutStep] = []
    for _ in range(max_steps):
        obs = render_observation(world, state, cfg)
        if encoder == "vae":
            mu, _ = encode(vae, obs)
        else:
            mu = cheat_encode(cheat, obs)
        act, st = controller_step(ctrl, mu, st)
        steps.append(RolloutStep(state, obs, act))
        state = step_dynamics(world, state, act, cfg.dt, cfg)
        if state.crashed:
            break
    return RolloutResult(steps, state, state.odometer, state.crashed)


# ---------------------------------------------------------------------------
# persistence


def save_controller(p: ControllerParams, path, extra_meta: dict | None = None) -> str:
    meta = {
        "k": p.k,
        "h_dim": p.h_dim,
        "mlp_hidden": list(p.mlp_hidden),
        "out_scale": list(map(float, p.out_scale)),
    }
    meta.update(extra_meta or {})
    return container.save_checkpoint(path, "controller", p.params, meta)


def load_controller(path) -> ControllerParams:
    ckpt = container.load_checkpoint(path)
    if ckpt.stage != "controller":
        raise FormatError(f"expected a controller checkpoint, got {ckpt.stage!r}")
    meta = ckpt.metadata
    return ControllerParams(
        ckpt.params,
        int(meta["k"]),
        int(meta["h_dim"]),
        tuple(meta["mlp_hidden"]),
        np.array(meta["out_scale"], dtype=np.float64),
    )
