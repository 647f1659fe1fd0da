"""Multi-tenant control plane and gateway for serving LoRA adapters over shared base models."""

__version__ = "0.1.0"
