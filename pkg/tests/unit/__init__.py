"""Unit tests for GroupDet."""
