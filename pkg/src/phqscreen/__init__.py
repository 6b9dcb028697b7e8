"""Depression pre-screening with chat-completion models.

Pipeline: transcript ingest -> knowledge-configured prompts -> model replies
(live or cassette replay) -> parsed likelihoods and PHQ-8 estimates -> metrics.
"""

__version__ = "0.1.0"
