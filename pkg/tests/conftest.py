import os

os.environ.setdefault('TF_CPP_MIN_LOG_LEVEL', '2')
os.environ.pop('MMKD_SEED', None)

import matplotlib  # noqa: E402
matplotlib.use('Agg')

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from config import get_config  # noqa: E402
from data_input import SyntheticWorld, synth_corpus  # noqa: E402
from models.encoders import make_synthetic_teacher  # noqa: E402


@pytest.fixture(scope='session')
def world():
    return SyntheticWorld(seed=3, n_classes=4)


@pytest.fixture(scope='session')
def tokenizer(world):
    return world.tokenizer()


@pytest.fixture(scope='session')
def corpus(world, tokenizer):
    return synth_corpus(world, 256, seed=1, tokenizer=tokenizer)


@pytest.fixture(scope='session')
def teachers(world, tokenizer):
    """Three planted-signal teachers (one of them 768-d) and one noise teacher."""
    return [
        make_synthetic_teacher(101, 512, world, tokenizer, signal=1.0, noise=0.05, teacher_id=0),
        make_synthetic_teacher(102, 768, world, tokenizer, signal=1.0, noise=0.10, teacher_id=1),
        make_synthetic_teacher(103, 512, world, tokenizer, signal=1.0, noise=0.15, teacher_id=2),
        make_synthetic_teacher(104, 512, world, tokenizer, signal=0.0, noise=1.00, teacher_id=3),
    ]


@pytest.fixture
def small_config():
    """Desk config shrunk so a stage trains in seconds."""
    return get_config('desk', overrides={
        'n_pairs': 64, 'pretrain_epochs': 1, 'distill_epochs': 1, 'align_epochs': 1,
        'pretrain_batch_size': 8, 'distill_batch_size': 8, 'image_hidden_dims': [32],
        'text_hidden_dims': [32], 'text_width': 16, 'image_conv_filters': [4],
        'pretrain_warmup_steps': 0, 'distill_warmup_steps': 0, 'prefetch_depth': 0,
    })


@pytest.fixture
def rng():
    return np.random.default_rng(0)
