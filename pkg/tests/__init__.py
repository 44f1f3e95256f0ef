"""
drlab test suite
"""
