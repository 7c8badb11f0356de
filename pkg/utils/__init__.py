"""
Utility modules for tierplan.
"""

from utils.logging import setup_logging

__all__ = ["setup_logging"]
