"""Simulation core for qunet: qudit states, gates, protocol plans and the engine that runs them."""
