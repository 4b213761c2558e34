"""
Shared helpers: runtime settings, seeding and logging setup.
"""
