"""Module entry point: ``python -m gsre`` runs the command-line front end."""

from .cli import entrypoint

entrypoint()
