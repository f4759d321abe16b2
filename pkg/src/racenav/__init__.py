"""Fault-tolerant navigation and planning stack for a simulated
autonomous race car: gated multi-GPS Kalman fusion, LiDAR wall
perception with a wall-following fallback, a Frenet-lattice road-graph
planner, and a deterministic fault-injection simulator."""

__version__ = "0.1.0"
