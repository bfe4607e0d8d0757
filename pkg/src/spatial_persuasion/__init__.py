"""Information design for spatial repositioning markets."""
