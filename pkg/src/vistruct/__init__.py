"""vistruct: curation engine for machine-generated visual instruction data.

Pipeline: generate candidates, collect human preference rankings, train
pairwise question/answer scorers, filter the corpus in two stages, then
rewrite and review the survivors against the target LLM's writing style.
"""

from . import annotate, corpus, filtration, generate, genkit, llmalign, prefs, reward, synth
from .errors import VistructError

__version__ = "0.1.0"

__all__ = [
    "VistructError",
    "annotate",
    "corpus",
    "filtration",
    "generate",
    "genkit",
    "llmalign",
    "prefs",
    "reward",
    "synth",
    "__version__",
]
