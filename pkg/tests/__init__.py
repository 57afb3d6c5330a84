"""
Test package for decision-tsp.
"""
