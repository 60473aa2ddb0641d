"""Correspondence-free point cloud registration with integer lookup-table
quantization, plus latency/resource models for a streaming accelerator."""

__version__ = "0.1.0"
