# Optimisation package
