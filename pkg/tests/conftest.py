"""Pytest wiring: absltest helpers need absl flags parsed before tests run."""

from absl import flags


def pytest_configure(config):
    del config
    if not flags.FLAGS.is_parsed():
        flags.FLAGS.mark_as_parsed()
