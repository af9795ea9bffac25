"""Knowledge-augmented biomedical relation extraction."""

__version__ = "0.1.0"
