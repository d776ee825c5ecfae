"""Private two-party data federation for a fixed multi-site clinical study.

Records stay XOR secret shared outside their site of origin; the compute pair
evaluates the whole pipeline with data-independent circuits and only the
suppressed aggregate tables are ever revealed.
"""

__version__ = "0.1.0"

from .config import StudyConfig
from .results import OutputRow, StudyOutput
from .sharing import AndTriple, ShareFile, WordShare, deal_triples, reconstruct, split
from .synth import GenParams

__all__ = [
    "AndTriple", "GenParams", "OutputRow", "ShareFile", "StudyConfig",
    "StudyOutput", "WordShare", "deal_triples", "reconstruct", "split",
]
