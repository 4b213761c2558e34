"""
Command-line scripts, one per sub-command.
"""
