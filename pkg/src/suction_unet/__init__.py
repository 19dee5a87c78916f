"""Suction grasp-region prediction with a from-scratch numpy U-net.

Modules:

- :mod:`~suction_unet.nn`: layer primitives with hand-written backward passes
- :mod:`~suction_unet.unet`: the network, forward/backward, checkpoints
- :mod:`~suction_unet.geometry`: back-projection and input assembly
- :mod:`~suction_unet.dataset`: scene I/O, labels, augmentation, splits
- :mod:`~suction_unet.training`: loss, optimizers, schedule, training loop
- :mod:`~suction_unet.postprocess`: smoothing, normalization, point selection
- :mod:`~suction_unet.evaluation`: precision metrics and result tables
- :mod:`~suction_unet.synthgen`: synthetic bin scenes
"""

from .unet import build_unet, load_checkpoint, save_checkpoint

__all__ = ["build_unet", "load_checkpoint", "save_checkpoint"]
__version__ = "0.1.0"
