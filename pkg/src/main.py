"""Main entry point for fbf-lab."""

from .ui.cli import main

if __name__ == "__main__":
    main()
