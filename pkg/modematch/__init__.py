from . import utils  # NOQA: F401
from .main import ModeMatch  # NOQA: F401
