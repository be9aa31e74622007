"""Train a small scanline VAE and inspect what it learned.

Collects a few expert corridors, fits the autoencoder for a short run,
then prints the ELBO trajectory, a depth-profile reconstruction, and the
latent-space smoothness that the controller will later rely on.
"""

import numpy as np

from cheatlab.expert import collect_trajectories
from cheatlab.vae import VaeTrainConfig, decode, encode, train_vae
from cheatlab.worldsim import DEFAULT_SIM, _derive_seed

cfg = DEFAULT_SIM
data = collect_trajectories("fake", n_episodes=4, max_steps=400,
                            seed=_derive_seed(0, "vae-demo"), cfg=cfg)
n_obs = sum(len(ep) for ep in data.episodes)
print(f"dataset: {len(data.episodes)} episodes, {n_obs} observations")

model, history = train_vae(
    data, VaeTrainConfig(k=8, hidden=(64, 32), epochs=60, batch=64, lr=1e-3, seed=0)
)
print("ELBO per epoch (every 10th):",
      " ".join(f"{history[i]:.4f}" for i in range(0, len(history), 10)))
print(f"final/first ratio: {history[-1] / history[0]:.3f}")

# reconstruction of one scan
obs = data.episodes[0][len(data.episodes[0]) // 2].observation
mu, logvar = encode(model, obs)
recon = decode(model, mu)
classes, depth = recon.class_channel, recon.depth_channel
print("\nlatent mu:", np.round(mu, 2))
mid = obs.width // 2 - 4
print("depth (true) :", np.round(obs.depth[mid:mid + 8], 2))
print("depth (recon):", np.round(depth[mid:mid + 8], 2))
print("class (true) :", (obs.classes[mid:mid + 8] * 0.5).round(2))
print("class (recon):", np.round(classes[mid:mid + 8], 2))

# nearby scans should encode to nearby latents
steps = data.episodes[0]
dz, dobs = [], []
for a, b in zip(steps[:-1], steps[1:]):
    za, _ = encode(model, a.observation)
    zb, _ = encode(model, b.observation)
    dz.append(float(np.linalg.norm(za - zb)))
    dobs.append(float(np.linalg.norm(a.observation.features()
                                     - b.observation.features())))
corr = np.corrcoef(dobs, dz)[0, 1]
print(f"\nstep-to-step |dz| vs |dobs| correlation: {corr:.2f} "
      f"(positive = smooth latent)")
