"""Graph-context relevance matching with teacher distillation."""
