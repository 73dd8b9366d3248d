"""
ABM-Flow Package

Numerical integration library and study harness for rectified-flow ODEs.
"""
