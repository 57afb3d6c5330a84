"""
decision-tsp - a graph neural network that answers the decision variant of
the traveling salesperson problem, with exact and heuristic tour oracles.
"""

__version__ = "0.1.0"
