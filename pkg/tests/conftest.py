import numpy as np
import pytest

from mvface.dataset_io import make_split, write_manifest
from mvface.pipeline import PipelineConfig, fit_images
from mvface.synthetic import make_subjects, write_dataset

SMALL_CFG = PipelineConfig(image_size=32, seed=3)


@pytest.fixture(scope="session")
def small_samples():
    """6 subjects x 6 instances at 32 px."""
    return make_subjects(n_subjects=6, n_instances=6, size=32, seed=11)


@pytest.fixture(scope="session")
def small_bundle(small_samples):
    train = [s for i, s in enumerate(small_samples) if i % 6 < 4]
    return fit_images([im for im, _ in train], [sub for _, sub in train], SMALL_CFG)


@pytest.fixture
def dataset_dir(tmp_path):
    """On-disk dataset of 5 subjects x 10 images (32 px) with a 60/20/20 manifest."""
    root = write_dataset(tmp_path / "data", make_subjects(5, 10, size=32, seed=5))
    manifest = make_split(root, (0.6, 0.2, 0.2), seed=1, relative_to=tmp_path)
    write_manifest(tmp_path / "manifest.csv", manifest)
    return tmp_path


def split_samples(samples, n_instances, n_train):
    train = [s for i, s in enumerate(samples) if i % n_instances < n_train]
    rest = [s for i, s in enumerate(samples) if i % n_instances >= n_train]
    return train, rest


def unzip(samples):
    return [im for im, _ in samples], np.array([sub for _, sub in samples])
