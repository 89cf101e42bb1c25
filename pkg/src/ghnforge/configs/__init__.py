"""Bundled JSON presets for split generation and run configuration."""
