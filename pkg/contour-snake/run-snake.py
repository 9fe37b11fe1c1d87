#!/usr/bin/env python3.11
"""
Command runner for the contour snake pipeline
Run `./run-snake.py --help` for the list of commands
"""

import sys
from pathlib import Path

# Add the project directory to Python path
project_dir = Path(__file__).parent
sys.path.insert(0, str(project_dir))


def main():
    """Dispatch to the snake command line"""
    try:
        from snake.cli import main as snake_main
    except ImportError as e:
        print(f"Import error: {e}", file=sys.stderr)
        print("Make sure you're in the correct directory and all dependencies are installed", file=sys.stderr)
        sys.exit(1)
    sys.exit(snake_main(sys.argv[1:]))


if __name__ == '__main__':
    main()
