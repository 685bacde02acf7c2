"""Label-aware optimal transport alignment and asymmetric two-modality fusion."""

from __future__ import annotations

__version__ = "0.1.0"
