"""Synthetic fixtures, gradient checks, reporting and the command-line surface."""

from .fixtures import SceneFixture, generate_scene, load_fixture, save_fixture
