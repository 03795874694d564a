# Network, losses and checkpoints
