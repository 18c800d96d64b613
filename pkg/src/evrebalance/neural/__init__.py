"""Small dense-network engine on numpy: reverse-mode tape, MLPs, Adam, checkpoints."""
