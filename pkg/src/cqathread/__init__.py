"""Good-vs-Bad comment classification for community QA threads.

Local MaxEnt classifiers score each comment and each comment pair; a
graph-cut or ILP decoder then picks a globally consistent labeling.
"""

__version__ = "0.1.0"

from .corpus import BAD, GOOD, Comment, Dataset, LabelMapping, Thread
from .inference import (
    InferenceConfig,
    LabelAssignment,
    ThreadScores,
    graph_cut_decode,
    ilp_decode,
    local_decode,
)
from .maxent import MaxEntClassifier
from .pipeline import ThreadLabeler

__all__ = [
    "BAD",
    "GOOD",
    "Comment",
    "Dataset",
    "InferenceConfig",
    "LabelAssignment",
    "LabelMapping",
    "MaxEntClassifier",
    "Thread",
    "ThreadLabeler",
    "ThreadScores",
    "graph_cut_decode",
    "ilp_decode",
    "local_decode",
]
