"""Information-theoretic diagnostics for chain-of-thought traces."""

__version__ = "0.1.0"

from .errors import CotlensError
from .traces import Corpus, Trace, TokenRecord, load_corpus, segment_steps
from .entropy import entropy_profile, token_entropy
from .lexicon import DEFAULT_LEXICON, EpistemicLexicon, count_markers

__all__ = [
    "__version__",
    "CotlensError",
    "Corpus",
    "Trace",
    "TokenRecord",
    "load_corpus",
    "segment_steps",
    "entropy_profile",
    "token_entropy",
    "DEFAULT_LEXICON",
    "EpistemicLexicon",
    "count_markers",
]
