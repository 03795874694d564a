# Datacube, simulation, corruption, views, baselines and metrics
