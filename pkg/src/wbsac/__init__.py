"""Soft actor-critic with Wasserstein-barycenter exploration between a pessimistic and an optimistic actor."""

__version__ = "0.1.0"
