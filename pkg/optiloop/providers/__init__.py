"""
Providers package initialization
"""
