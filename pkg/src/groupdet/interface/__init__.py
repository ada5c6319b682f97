"""
Interface module - Command line and overlay rendering.
"""
