"""fdvm: frequency-domain exposure correction from the command line."""

import sys

from fdvmnet.cli import run
from fdvmnet.errors import ContractError, NumericError, PartialFailure

EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_IO = 3
EXIT_PARTIAL = 4


def main() -> None:
    """Main entry point for the fdvm subcommands."""
    try:
        status = run(sys.argv[1:])
        if status:
            sys.exit(status)
    except PartialFailure as e:
        print(f"Error: {e}")
        sys.exit(EXIT_PARTIAL)
    except (ContractError, NumericError) as e:
        print(f"Error: internal: {e}")
        sys.exit(EXIT_INTERNAL)
    except ValueError as e:
        print(f"Error: {e}")
        sys.exit(EXIT_INPUT)
    except FileNotFoundError as e:
        print(f"Error: file not found: {e.filename or e}")
        sys.exit(EXIT_INPUT)
    except OSError as e:
        print(f"Error: {e}")
        sys.exit(EXIT_IO)
    except KeyboardInterrupt:
        print("\nExited by user.")
        sys.exit(0)
    except Exception as e:
        print(f"Error: {e}")
        sys.exit(EXIT_INTERNAL)


if __name__ == "__main__":
    main()
