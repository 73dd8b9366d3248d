"""
Utilities Package

Contains utility functions, helpers, and common tools.
"""
