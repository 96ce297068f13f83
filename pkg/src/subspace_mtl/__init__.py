"""Training in random and learned subspaces, compression of the coefficients, and
encoding-length generalisation certificates for single-task, multi-task and transfer learning."""
__version__ = "0.1.0"
