# Samplers, configuration and run driver
