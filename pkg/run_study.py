#!/usr/bin/env python3
"""
Study Launcher
Runs the ABM-Flow study harness from a source checkout
"""
import sys
from pathlib import Path


def main():
    # Add the src directory to Python path
    src_path = Path(__file__).parent.absolute() / "src"
    sys.path.insert(0, str(src_path))

    try:
        from abm_flow.harness.cli import main as cli_main
    except ImportError as e:
        print(f"❌ Import error: {e}", file=sys.stderr)
        print("Make sure all dependencies are installed: pip install -r requirements.txt", file=sys.stderr)
        sys.exit(1)

    cli_main(prog_name="run_study.py")


if __name__ == "__main__":
    main()
