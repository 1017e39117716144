"""Vector-valued L-splines: Green's matrices and TV-regularized recovery."""
