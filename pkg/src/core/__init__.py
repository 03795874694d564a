# Core services: constants, configuration, errors and logging, persistence, orchestration
