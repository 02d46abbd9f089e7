"""Numerical lab for second-order BSDEs with jumps and their fully nonlinear PIDEs."""
