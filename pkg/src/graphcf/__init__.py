"""Reinforcement-learned counterfactual explanations for GNN node classifiers."""

__version__ = "0.1.0"
