"""Reactive whole-body control of a mobile manipulator among moving obstacles."""

__version__ = "0.1.0"
