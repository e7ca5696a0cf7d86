"""Toy decoder with a pre-softmax audio attention boost."""

from ._mata import *  # noqa: F401,F403
from ._mata import __doc__, cli_run  # noqa: F401


def run_cli(*args):
    """Runs the `mata` command line in-process. Returns (exit_code, stdout, stderr)."""
    return cli_run([str(a) for a in args])
