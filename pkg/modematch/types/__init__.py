from .general import AutoStrEnum, FilePath  # NOQA: F401
from .numeric import IndexArray, Matrix, Vector  # NOQA: F401
