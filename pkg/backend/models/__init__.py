# Pydantic models for signals, configuration and reports
