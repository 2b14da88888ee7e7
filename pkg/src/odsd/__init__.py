"""Open-world data sampling distillation."""

__version__ = "0.1.0"
