"""Monte Carlo harness, experiment drivers and command line interface."""
