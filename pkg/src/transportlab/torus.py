"""Geometry helpers for the flat torus [0, 2*pi)^d."""

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap(x):
    """Wrap coordinates into [0, 2*pi)."""
    return np.mod(x, TWO_PI)


def displacement(x, y):
    """Coordinatewise displacement x - y wrapped into [-pi, pi)."""
    return np.mod(np.asarray(x) - np.asarray(y) + np.pi, TWO_PI) - np.pi


def distance(x, y):
    """Geodesic (wrapped Euclidean) distance; works on batched inputs."""
    return np.linalg.norm(displacement(x, y), axis=-1)
