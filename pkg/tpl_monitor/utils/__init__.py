# Utility functions package for TPL Monitor
