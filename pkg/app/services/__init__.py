"""Services: model, training, relation analysis and datasets."""
