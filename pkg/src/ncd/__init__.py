"""Novel category discovery: dual ranking-statistics pseudo-labels on a
global embedding and a local part dictionary, mutual distillation between the
two branches over feature banks, and Hungarian-matched clustering evaluation.
"""

__version__ = "0.1.0"
