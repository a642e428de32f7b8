"""
This is the setup.py for BuresTools.

All metadata lives in setup.cfg.
"""

from setuptools import setup

setup()
