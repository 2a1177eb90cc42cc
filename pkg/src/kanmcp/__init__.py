"""KAN-MCP: interpretable multimodal regression with a KAN fusion head,
information-bottleneck encoders and Pareto gradient coordination."""

__version__ = "0.1.0"
