"""Integration tests for GroupDet."""
