# Experiment drivers; run from the repository root.
