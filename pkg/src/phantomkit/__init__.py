"""phantomkit: ML-driven assembly of patient-specific voxel phantoms."""

__version__ = "0.1.0"
