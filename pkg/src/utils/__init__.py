# Utilities: metrics, serialization, output formatting
