"""Goal-conditioned distance learning plus graph search over buffered states."""

__version__ = "0.1.0"
