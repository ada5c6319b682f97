"""GroupDet test suite."""
