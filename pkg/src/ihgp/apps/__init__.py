"""Command line tool, data I/O, configuration and synthetic data."""
