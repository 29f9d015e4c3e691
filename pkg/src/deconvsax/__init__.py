"""Deconvolutional autoencoder features, SAX bags and Markov transition graphs for multivariate time series."""

__version__ = "0.1.0"
