"""Weighted variation spaces of ReLU atoms on the ball and the square."""
