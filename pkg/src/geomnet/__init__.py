"""LeNet-5 geometric figure classifier built on a small numpy engine."""

__version__ = "0.1.0"

CLASS_NAMES = ("triangle", "circle", "square")
