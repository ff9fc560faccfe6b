import numpy as np
import pytest

from hdgt.scene import GeneratorConfig, generate_synthetic

TEMPLATES = ("straight", "intersection", "roundabout")


def make_scene(seed=0, template="straight", **kw):
    return generate_synthetic(seed, GeneratorConfig(template=template, **kw))


def mixed_scenes(n, start=0, **kw):
    return [make_scene(start + i, TEMPLATES[i % 3], **kw) for i in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scenes():
    return mixed_scenes(3)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
