"""Test suite for PoseForge."""
