"""Continuous-state branching processes in Lévy environments."""
