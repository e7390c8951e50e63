# avae package
__all__ = [
    "checkpoint", "cli", "config", "controller", "data", "discriminator", "errors", "generator", "gradcheck",
    "graph", "graph_state", "latent", "layers", "logger", "losses", "models", "optim", "scoring", "tensor", "utils",
]
