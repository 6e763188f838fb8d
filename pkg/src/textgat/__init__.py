"""Transductive text classification over heterogeneous word/document graphs.

Builds a single graph from a labeled corpus (PMI word-word edges, TF-IDF
document-word edges) and classifies the document nodes with a masked
multi-head graph attention network; a two-layer GCN is the in-repo baseline.
"""

__version__ = "0.1.0"
