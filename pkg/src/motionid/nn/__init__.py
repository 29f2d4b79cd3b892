"""
A small numpy network core: layers with analytic gradients, the three losses,
Adam, the two models and checkpoints.
"""
