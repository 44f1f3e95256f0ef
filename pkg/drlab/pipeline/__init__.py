"""Stage orchestration, run manifests and reporting."""
