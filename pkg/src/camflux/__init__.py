"""Detection-count fluctuation metrics, paired comparisons, tracking churn and a camera auto-exposure simulator."""

__version__ = "0.1.0"
