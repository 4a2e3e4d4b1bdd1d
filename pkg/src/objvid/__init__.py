"""Object-token video transformer at desk scale: a numpy laboratory for
structured hand-object supervision and frame-clip consistency."""

__version__ = "0.1.0"
