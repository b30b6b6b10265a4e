import numpy as np
import pytest

from shrubmap import augment, classifier, synth
from shrubmap.raster import GeoTransform, Scene

ACCEPT_SEED = 7
ACCEPT_TRAIN = classifier.TrainConfig(max_iterations=2000)


def trained_on(result: synth.SynthResult, cfg: classifier.TrainConfig = ACCEPT_TRAIN):
    """Augmented training split plus raw validation split, as the CLI does."""
    tr = augment.expand_dataset(result.patches.subset("train"), augment.AugmentConfig(rng_seed=1))
    return classifier.train(tr.concat(result.patches.subset("validation")), cfg)


@pytest.fixture(scope="session")
def scene512():
    return synth.generate(synth.SynthConfig(rng_seed=ACCEPT_SEED))


@pytest.fixture(scope="session")
def model512(scene512):
    return trained_on(scene512)


@pytest.fixture(scope="session")
def clf512(model512):
    return classifier.BuiltinClassifier.from_trained(model512)


def make_scene(pixels, gt=None):
    return Scene(np.asarray(pixels, dtype=np.uint8), gt or GeoTransform(0.0, 0.0, 1.0, -1.0))


# ----------------------------------------------------------------------------- acceptance reporting

ACCEPTANCE_LINES: dict[str, str] = {}


def record_acceptance(key: str, passed: bool, detail: str) -> None:
    line = f"criterion {key}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES[key] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split()[0].rstrip("abcdefgh")), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
