# Model, statistics and linear-algebra foundations
