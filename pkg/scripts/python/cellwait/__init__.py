"""Coverage, capacity and energy efficiency of delayed access in small-cell networks."""
