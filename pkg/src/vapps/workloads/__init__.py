"""Workloads driven through the Get/Inc/Clock API."""
