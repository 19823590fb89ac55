"""Shared pytest configuration."""


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: full-size corpus runs (deselect with -m "not slow")')
