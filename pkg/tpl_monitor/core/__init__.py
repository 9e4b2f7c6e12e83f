# Domain models and statistical methods for TPL machine-health monitoring
