"""Bayesian inference of haplotype frequencies from pooled allele counts."""

__version__ = "0.1.0"
