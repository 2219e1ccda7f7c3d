"""Deep Q-learning engine with built-in pixel mini-games and transfer modes."""

__version__ = "0.1.0"
