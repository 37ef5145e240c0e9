"""End-to-end orchestration used by the command-line interface."""
