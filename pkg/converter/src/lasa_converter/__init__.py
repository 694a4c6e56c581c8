from .convert import convert_path, convert_shape
from .reader import ContainerError, LasaDemo, LasaShape, read_shape

__all__ = [
    "ContainerError",
    "LasaDemo",
    "LasaShape",
    "convert_path",
    "convert_shape",
    "read_shape",
]
