"""Package entry point."""

from fdvm import main


if __name__ == "__main__":
    main()
