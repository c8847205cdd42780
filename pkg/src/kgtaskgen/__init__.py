"""Knowledge-graph-driven benchmark task generation."""
