"""Numpy-only neural toolkit: autodiff tensors, recurrent/attention layers,
the conditional drum model, training, and sampling."""
