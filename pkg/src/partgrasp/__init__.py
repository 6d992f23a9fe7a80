"""Part-aware grasp planning from language instructions on point clouds."""

__version__ = "0.1.0"
