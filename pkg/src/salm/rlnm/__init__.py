"""Learned-policy block: ST-graph features, spatial-temporal transformer,
policy heads, an ORCA-backed fallback policy, and a desk-scale trainer."""
