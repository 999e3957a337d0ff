"""Small-object grasping, in-hand alignment and tactile classification in simulation."""

__version__ = "0.1.0"
