"""Transfer-learning pipeline for staged-dementia MRI classification.

Modules:
    manifest    dataset scanning, split assignment, leakage auditing
    imaging     decode/resize/normalize/augment and batch assembly
    model       backbone interface + classification head
    training    Adamax/Adam optimization, early stopping, checkpoints
    evaluation  confusion matrix, per-class metrics, report rendering
    cli         operator command-line surface
"""

__version__ = "0.1.0"
