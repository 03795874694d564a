# Dataset building, training, inference and sweeps
