"""varl: visual arithmetic with a modular interface and an RL-trained controller."""

__version__ = "0.1.0"
