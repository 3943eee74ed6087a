"""deskbert: a small BERT-style encoder, its autograd engine, and a harness
for domain pre-training and sentiment fine-tuning experiments on one CPU."""

__version__ = "0.1.0"
