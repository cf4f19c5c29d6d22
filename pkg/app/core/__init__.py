"""Core module: configuration, exceptions and logging."""
