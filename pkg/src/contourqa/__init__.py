"""Quality assurance toolkit for auto-generated organ contours.

Computes geometric agreement metrics against ground truth, derives
per-organ quality labels, trains a one-class SVM on high-quality contours
only, and measures how far a contour must drift before the model flags it.
"""

__version__ = "0.1.0"
