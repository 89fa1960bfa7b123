"""Simulation and estimation toolkit for the RESOLUTE phase-cycled correlation protocol."""
