"""Average-reward multiagent learning with variational opponent inference on iterated matrix games."""

__version__ = "0.1.0"
