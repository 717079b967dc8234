from __future__ import absolute_import, division, print_function

import random

import numpy as np
import tensorflow as tf


def reset_rand_seed(seed):
    """Seeds python, numpy and TensorFlow and turns on deterministic ops."""
    seed = int(seed)
    random.seed(seed)
    np.random.seed(seed)
    tf.keras.utils.set_random_seed(seed)
    try:
        tf.config.experimental.enable_op_determinism()
    except (AttributeError, RuntimeError):
        pass
    return seed
