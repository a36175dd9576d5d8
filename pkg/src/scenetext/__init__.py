"""Scene text detection: contrast-enhanced MSER candidates, a multi-task text CNN, and line grouping."""

__version__ = "0.1.0"
