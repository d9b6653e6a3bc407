"""UI modules for fbf-lab."""
