# Configuration package for TPL Monitor
