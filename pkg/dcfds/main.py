from __future__ import annotations

import sys

from .cli import cli_dispatch


def main() -> None:
    raise SystemExit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
