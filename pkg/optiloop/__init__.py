"""
optiloop package initialization
"""
