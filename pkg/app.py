import sys

from src.cli import main

# -----------------------------------------------------------------------------
# Entrypoint: python app.py <command> ...
# -----------------------------------------------------------------------------
if __name__ == "__main__":
    sys.exit(main())
