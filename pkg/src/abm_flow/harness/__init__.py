"""
Harness Package

Study runners, report writers and the command-line front end.
"""
