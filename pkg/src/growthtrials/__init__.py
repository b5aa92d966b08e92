"""Two-population growth models for gene knockout trials.

Exponential and logistic models of a modified and a control cell
population, log-normal likelihood fitting, profile-likelihood intervals,
bootstrap intervals, stochastic simulation of experiments and the
comparison of effect-detection methods.
"""

__version__ = "0.1.0"
