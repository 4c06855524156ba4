"""Module for resources"""
