"""Resilience rating of metropolitan grid cells.

Twelve socio-technical features per grid cell are encoded with a stacked
denoising autoencoder, clustered by deep embedded clustering, and ranked
into ordinal resilience levels via classifier feature importances, with
spatial autocorrelation, what-if re-rating, and combined resilience-risk
categorization on top.
"""

__version__ = "0.1.0"
