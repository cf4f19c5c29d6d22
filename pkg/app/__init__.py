"""Self-guided masked autoencoder toolkit."""
