from numpy import ndarray as Array

__all__ = ["Array"]
