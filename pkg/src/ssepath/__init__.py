"""Path sampling (TPS, TIS) for classical Langevin and stochastic Schrodinger
dynamics in a quartic double well."""

__version__ = "0.1.0"
