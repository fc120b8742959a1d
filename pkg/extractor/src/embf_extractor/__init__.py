from .extract import ExtractionSpec, extract

__all__ = ["ExtractionSpec", "extract"]
