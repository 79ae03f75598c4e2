"""Tests for rmldp."""
