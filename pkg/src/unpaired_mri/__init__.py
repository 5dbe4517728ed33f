"""Unpaired Wasserstein-GAN training for undersampled MRI reconstruction,
at desk scale: synthetic phantoms, a multi-coil forward model, plain and
unrolled data-consistency generators, a gradient-penalized critic, and
exact optimal-transport oracles to validate the adversarial machinery.
"""

__version__ = "0.1.0"
