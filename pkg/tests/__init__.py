"""
Tests del toolkit
"""
