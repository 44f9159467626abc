"""
Top-level package __init__.py for accessing modules.
"""

from .models import *
