# Command line interface package for TPL Monitor
