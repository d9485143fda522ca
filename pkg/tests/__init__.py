"""Tests for acind"""
