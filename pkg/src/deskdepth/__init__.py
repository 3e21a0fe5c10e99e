"""Self-supervised monocular depth and egomotion on a small numpy autodiff core."""

__version__ = "0.1.0"
