"""Quantum Monte Carlo model of THz displacement-current measurement.

One device electron is evolved as a conditional wave function with a Bohmian
trajectory, coupled by Coulomb interaction to a classical electron gas in the
metal probe.  The measured current is the time derivative of the electric
flux through a large sensing surface.
"""

__version__ = "0.1.0"
