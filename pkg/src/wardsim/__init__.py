"""wardsim: longitudinal patient-timeline simulation engine."""

__version__ = "0.1.0"
