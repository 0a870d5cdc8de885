"""Long-document classification from small, randomly sampled token chunks,
plus a miniature in-process durable-execution engine that runs the
classification pipeline with retries, batching, and event histories.
"""

__version__ = "0.1.0"
