import os
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from pyvolseg.converters.synth import generate
from pyvolseg.models.io import SynthConfig
from pyvolseg.volume_io import write_volume

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))


def write_synth(out: Path, **kwargs) -> tuple[Path, Path]:
    out.mkdir(parents=True, exist_ok=True)
    images, labels = generate(SynthConfig(**kwargs))
    write_volume(images, out / "images.vseg")
    write_volume(labels, out / "labels.vseg")
    return out / "images.vseg", out / "labels.vseg"


@pytest.fixture
def small_synth(tmp_path: Path) -> tuple[Path, Path]:
    """Four 32×32 slices of four-class synthetic cells."""
    return write_synth(tmp_path / "synth", dims=(4, 32, 32), seeds_per_slice=6, seed=3)
