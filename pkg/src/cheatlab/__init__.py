"""cheatlab: a desk-scale policy-transfer laboratory.

Learn a scanline autoencoder and an evolved recurrent controller in a
gate-filled training world, freeze both, then transfer to a cluttered
gate-free world by retraining only the perception encoder to report the
latent codes the frozen controller was raised on.
"""

__version__ = "0.1.0"
