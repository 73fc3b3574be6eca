"""TASS: target-aware spatial grounding and joint temporal grounding for audio-visual QA."""

__version__ = "0.1.0"
__all__ = ["__version__", "main"]


def main() -> None:
    from tass.cli import main as cli_main

    cli_main()
