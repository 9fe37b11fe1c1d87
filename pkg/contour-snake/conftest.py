"""
Shared pytest setup for the contour snake tests
"""
import os

import pytest

# Set environment variables
os.environ['SNAKE_ENV'] = 'testing'


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: full training runs, enabled with SNAKE_RUN_SLOW=1')


def pytest_collection_modifyitems(config, items):
    if os.getenv('SNAKE_RUN_SLOW') == '1':
        return
    skip_slow = pytest.mark.skip(reason='set SNAKE_RUN_SLOW=1 to run')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def tiny_dataset(tmp_path_factory):
    """Six 96x96 scenes: 4 train, 1 val, 1 test"""
    from snake.dataset import generate_dataset

    root = tmp_path_factory.mktemp('phantoms')
    generate_dataset(str(root), seed=7, count=6, height=96, width=96)
    return str(root)
