"""Neural wrapper toolkit."""
