"""Inversion estimation of thinned size distributions and its semi-stable limit laws."""
