"""Model-inversion eavesdropping on deep JSCC links, and a permutation/substitution defense."""

__version__ = "0.1.0"
