import numpy as np
import pytest
import torch

from gala import dataset, synthetic
from gala.encoder import EncoderConfig

torch.set_num_threads(max(1, torch.get_num_threads()))


TINY_ENCODER = EncoderConfig(embed_dim=16, input_size=32, channels=(4, 8, 8, 16))


@pytest.fixture(scope="session")
def tiny_encoder_config():
    return TINY_ENCODER


def make_pairs(n, seed0=0, n_objects=1):
    """n synthetic training pairs, one object per scene."""
    pairs = []
    for s in range(n):
        image, instances = synthetic.generate_scene(seed0 + s, n_objects=n_objects)
        mask, category = instances[0]
        pair_id = f"scene{seed0 + s}#0"
        bg, fg = dataset.extract_pair(
            image, mask, pair_id=pair_id, source_image_id=f"scene{seed0 + s}", category=category
        )
        pairs.append(dataset.PairRecord(pair_id=pair_id, background=bg, foreground=fg, split="train"))
    return pairs


@pytest.fixture(scope="session")
def eight_pairs():
    return make_pairs(8)


@pytest.fixture(scope="session")
def random_unit_rows():
    def build(n, d, seed):
        rng = np.random.default_rng(seed)
        mat = rng.normal(size=(n, d))
        return mat / np.linalg.norm(mat, axis=1, keepdims=True)

    return build
