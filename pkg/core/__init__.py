"""Core module for basis-completion: bases, duals, solvers and certificates."""
