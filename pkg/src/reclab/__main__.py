"""Allow `python -m reclab`."""

from .cli import main

if __name__ == "__main__":
    main()
