"""Feature-swapping multi-modal reasoner: a desk-scale bimodal classifier with
its own autodiff core, synthetic benchmark, and experiment harness."""

__version__ = "0.1.0"
