"""
Attention-aware microarchitecture design space exploration.
"""

__license__ = "MIT"
__version__ = "0.1.0"
