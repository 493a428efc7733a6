"""simflow: document-driven simulations for generic PDE systems and agent-based models.

Pipeline: declarative model/problem/policy documents -> validation ->
discretization (method of lines, finite differences) -> execution on an
internal runtime (structured periodic grids, graphs, or spatial agent sets).
"""

from pathlib import Path

__version__ = "0.1.0"


def library_path(*parts):
    """Path to a shipped library document, e.g. library_path('models', 'wave_model.json')."""
    return Path(__file__).parent.joinpath("library", *parts)
