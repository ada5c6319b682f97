"""
Evaluation module - COCO-style detection metrics.
"""

from groupdet.evaluation.cocoeval import evaluate

__all__ = ["evaluate"]
