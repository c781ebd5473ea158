"""Closed-form linear autoencoder recommenders with relaxed diagonal constraints."""

__version__ = "0.1.0"

from .gram import dropout_diagonal, gram, precision
from .interactions import InteractionMatrix, load_interactions, strong_split, weak_split
from .solvers import (SolverConfig, SolverOutput, solve, solve_dlae, solve_ease, solve_edlae,
                      solve_lae, solve_rdlae, solve_rlae)

__all__ = [
    "InteractionMatrix", "load_interactions", "strong_split", "weak_split",
    "gram", "dropout_diagonal", "precision",
    "SolverConfig", "SolverOutput", "solve", "solve_lae", "solve_ease", "solve_dlae",
    "solve_edlae", "solve_rlae", "solve_rdlae",
]
