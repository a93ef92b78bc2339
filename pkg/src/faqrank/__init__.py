"""faqrank: a desk-scale dual-encoder FAQ retrieval stack.

Pipeline: raw corpora -> sentence/comment pairs -> shared BPE vocabulary ->
two-stage pre-training (general, then conversational) with in-batch
negatives -> FAQ fine-tuning -> split-based evaluation -> cached-embedding
retrieval service. Everything runs on a single CPU.
"""

__version__ = "0.1.0"
