"""Core types, configuration and orchestration for PoseForge."""
