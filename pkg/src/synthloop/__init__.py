"""Student-guided iterative synthetic data generation.

Score a seed corpus against the current student, select exemplars with an
active-learning strategy, have a teacher synthesize new question-answer
pairs, fine-tune the student on the accumulated synthetic set, and measure
data efficiency.
"""

__version__ = "0.1.0"
