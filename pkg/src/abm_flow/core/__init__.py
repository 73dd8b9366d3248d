"""
Core Package

Velocity fields, solvers, step control and feature injection.
"""
