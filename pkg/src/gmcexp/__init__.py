"""Multifractal exponents of Gibbs measures built on log-correlated Gaussian fields.

Synthesises the regularised field exactly on a grid, evaluates Gibbs and
chaos functionals, and estimates quenched and annealed exponents over a
ladder of cutoffs, with exponential tilting for the rare-event-dominated
annealed averages.
"""

__version__ = "0.1.0"
