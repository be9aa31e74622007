"""Scanline variational autoencoder.

The encoder maps a flattened observation (2W floats: class levels then
depths) through tanh dense layers to a 2k head read as (mu, logvar); the
decoder mirrors the stack back to a sigmoid 2W reconstruction whose first
W entries are the class channel and last W the depth channel. Training
minimizes reconstruction MSE plus beta times the diagonal-Gaussian KL.

beta trades reconstruction for latent regularity. The default is small
because the reconstruction term is a mean over 2W entries while the KL is
a sum over k; at beta = 1 the KL swamps the signal and the posterior mean
collapses to zero, which defeats every downstream consumer of mu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import container
from .errors import ContractError, DimensionError, FormatError
from .expert import Dataset
from .worldsim import Observation, _derive_seed

BETA_DEFAULT = 1e-3


@dataclass
class VaeParams:
    """Parameter set plus the architecture needed to run it."""

    params: ad.ParamSet
    k: int
    hidden: tuple[int, ...]
    width: int


@dataclass(frozen=True)
class VaeTrainConfig:
    k: int = 8
    hidden: tuple[int, ...] = (128, 64)
    beta: float = BETA_DEFAULT
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-3
    seed: int = 0


@dataclass
class Reconstruction:
    """Observation-shaped belief, both channels in (0, 1)."""

    class_channel: np.ndarray
    depth_channel: np.ndarray


def _layer_sizes(k: int, hidden: tuple[int, ...], width: int):
    enc = [2 * width, *hidden, 2 * k]
    dec = [k, *reversed(hidden), 2 * width]
    return enc, dec


def vae_init(
    k: int, hidden: tuple[int, ...], seed: int, width: int = 64
) -> VaeParams:
    """Seeded init: weights N(0, 1/fan_in), biases zero."""
    if k < 1 or width < 1 or any(h < 1 for h in hidden):
        raise ContractError(f"bad architecture k={k} hidden={hidden} width={width}")
    rng = np.random.default_rng(seed)
    params = ad.ParamSet()
    enc, dec = _layer_sizes(k, tuple(hidden), width)
    for prefix, sizes in (("enc", enc), ("dec", dec)):
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            w = rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)
            params.add(f"{prefix}/w{i}", w)
            params.add(f"{prefix}/b{i}", np.zeros(n_out))
    return VaeParams(params, k, tuple(hidden), width)


def _stack(params: ad.ParamSet, prefix: str, n_layers: int, x: ad.Tensor,
           final: str | None) -> ad.Tensor:
    """Dense stack: tanh between layers, `final` activation on the last."""
    h = x
    for i in range(n_layers):
        h = ad.affine(params[f"{prefix}/w{i}"], h, params[f"{prefix}/b{i}"])
        if i < n_layers - 1:
            h = ad.activation("tanh", h)
        elif final is not None:
            h = ad.activation(final, h)
    return h


def _check_obs(p: VaeParams, obs: Observation) -> None:
    if obs.width != p.width:
        raise DimensionError(
            f"observation width {obs.width} does not match model width {p.width}"
        )


def encode(p: VaeParams, obs: Observation) -> tuple[np.ndarray, np.ndarray]:
    """Posterior parameters (mu, logvar) for one observation."""
    _check_obs(p, obs)
    head = _encode_traced(p, ad.constant(obs.features()))
    return head.data[: p.k].copy(), head.data[p.k :].copy()


def _encode_traced(p: VaeParams, x: ad.Tensor) -> ad.Tensor:
    return _stack(p.params, "enc", len(p.hidden) + 1, x, final=None)


def _decode_traced(p: VaeParams, z: ad.Tensor) -> ad.Tensor:
    return _stack(p.params, "dec", len(p.hidden) + 1, z, final="sigmoid")


def decode(p: VaeParams, z: np.ndarray) -> Reconstruction:
    """Decode a latent vector into an observation-shaped belief."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (p.k,):
        raise DimensionError(
            f"latent dims {list(z.shape)} do not match k={p.k}"
        )
    out = _decode_traced(p, ad.constant(z)).data
    return Reconstruction(out[: p.width].copy(), out[p.width :].copy())


def reparameterize(mu, logvar, eps):
    """z = mu + exp(logvar / 2) * eps.

    Accepts Tensors (differentiable through mu and logvar; eps is always a
    constant) or plain arrays, which take a numpy fast path.
    """
    if isinstance(mu, ad.Tensor) or isinstance(logvar, ad.Tensor):
        eps_t = eps if isinstance(eps, ad.Tensor) else ad.constant(eps)
        sigma = ad.activation("exp", ad.scale(logvar, 0.5))
        return ad.add(mu, ad.mul(sigma, eps_t))
    return mu + np.exp(0.5 * logvar) * eps


def _elbo_graph(p: VaeParams, x: ad.Tensor, eps: np.ndarray, beta: float):
    """Shared single/batch graph; x is [2W] or [B, 2W], eps matches mu."""
    head = _encode_traced(p, x)
    mu = ad.narrow(head, 0, p.k)
    logvar = ad.narrow(head, p.k, 2 * p.k)
    z = reparameterize(mu, logvar, ad.constant(eps))
    recon = _decode_traced(p, z)
    loss = ad.add(
        ad.mse(recon, x), ad.scale(ad.gaussian_kl(mu, logvar), beta)
    )
    return loss


def elbo_loss(
    p: VaeParams, obs: Observation, eps: np.ndarray, beta: float = BETA_DEFAULT
) -> ad.Tensor:
    """Scalar training loss node for one observation.

    eps must hold k standard-normal draws; passing the same eps reproduces
    the same loss bit for bit.
    """
    _check_obs(p, obs)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (p.k,):
        raise DimensionError(f"eps dims {list(eps.shape)} do not match k={p.k}")
    return _elbo_graph(p, ad.constant(obs.features()), eps, beta)


def train_vae(data: Dataset, cfg: VaeTrainConfig) -> tuple[VaeParams, list[float]]:
    """Minibatch Adam over every observation in a corridor dataset.

    Returns the trained model and one mean loss per epoch. cfg.epochs = 0
    returns the seeded init untouched. The schedule (shuffles and noise
    draws) depends only on cfg.seed, never on wall clock.
    """
    if data.world_kind != "fake":
        raise ContractError(
            f"the autoencoder trains on corridor data, got {data.world_kind!r}"
        )
    observations = data.observations()
    if not observations:
        raise ContractError("dataset holds no observations")
    width = observations[0].width
    p = vae_init(cfg.k, cfg.hidden, cfg.seed, width)
    x_all = np.stack([o.features() for o in observations])
    n = x_all.shape[0]
    rng = np.random.default_rng(_derive_seed(cfg.seed, "vae-train"))
    opt = ad.Adam(ad.AdamConfig(lr=cfg.lr))
    history: list[float] = []
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        noise = rng.standard_normal((n, cfg.k))
        total = 0.0
        for at in range(0, n, cfg.batch):
            idx = order[at : at + cfg.batch]
            loss = _elbo_graph(p, ad.constant(x_all[idx]), noise[idx], cfg.beta)
            grads = ad.backward(loss, p.params)
            opt.step(p.params, grads)
            total += loss.item() * len(idx)
        history.append(total / n)
    return p, history


# ---------------------------------------------------------------------------
# persistence


def save_vae(p: VaeParams, path, extra_meta: dict | None = None) -> str:
    meta = {"k": p.k, "hidden": list(p.hidden), "width": p.width}
    meta.update(extra_meta or {})
    return container.save_checkpoint(path, "vae", p.params, meta)


def load_vae(path) -> VaeParams:
    ckpt = container.load_checkpoint(path)
    if ckpt.stage != "vae":
        raise FormatError(f"expected a vae checkpoint, got {ckpt.stage!r}")
    meta = ckpt.metadata
    return VaeParams(
        ckpt.params, int(meta["k"]), tuple(meta["hidden"]), int(meta["width"])
    )
