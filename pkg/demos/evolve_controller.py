"""Evolve the recurrent controller against imitation fitness.

Short run at reduced sizes: the population hill-climbs toward the expert
action sequence through the frozen encoder's latents, then the best
genome flies a held-out corridor closed-loop.
"""

import numpy as np

from cheatlab.expert import collect_trajectories
from cheatlab.policy import (
    EvolutionConfig,
    ImitationEvaluator,
    controller_from_genome,
    controller_template,
    evolve,
    genome_size,
    rollout,
)
from cheatlab.vae import VaeTrainConfig, train_vae
from cheatlab.worldsim import DEFAULT_SIM, _derive_seed, count_gates_passed, spawn_fake_world

cfg = DEFAULT_SIM

data = collect_trajectories("fake", n_episodes=4, max_steps=400,
                            seed=_derive_seed(0, "evolve-demo"), cfg=cfg)
vae, _ = train_vae(data, VaeTrainConfig(k=8, hidden=(64, 32), epochs=40,
                                        batch=64, lr=1e-3, seed=0))

template = controller_template(k=vae.k, cfg=cfg)
evaluator = ImitationEvaluator(vae, data, template)
dim = genome_size(template)
zero_err = -float(evaluator([np.zeros(dim)])[0])
print(f"genome has {dim} parameters; zero-genome imitation error {zero_err:.4f}")

best, history = evolve(
    EvolutionConfig(population=32, elites=4, mutation_sigma=0.02,
                    generations=40, seed=5),
    evaluator, dim,
)
for g in range(0, len(history), 8):
    print(f"  gen {history[g].generation:3d}: best={history[g].best:.5f} "
          f"mean={history[g].mean:.5f}")
print(f"final imitation error {-best.fitness:.4f} "
      f"({-best.fitness / zero_err:.1%} of zero-genome)")

ctrl = controller_from_genome(best.values, template)
world = spawn_fake_world(_derive_seed(0, "evolve-demo-heldout"), cfg=cfg)
res = rollout(world, vae, ctrl, max_steps=1200, encoder="vae", cfg=cfg)
pos = [(s.state.position[0], s.state.position[1]) for s in res.steps]
pos.append((res.final_state.position[0], res.final_state.position[1]))
print(f"held-out corridor: odometer={res.odometer:.1f} m, "
      f"gates={count_gates_passed(world, pos)}/{len(world.gates)}, "
      f"crashed={res.crashed}")
print("(a short demo run; the full-size defaults in the pipeline train "
      "much further)")
