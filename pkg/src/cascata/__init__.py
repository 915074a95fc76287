"""Random multiplicative cascades on b-ary trees: simulation, spine diagnostics, percolation."""
__version__ = "0.1.0"
