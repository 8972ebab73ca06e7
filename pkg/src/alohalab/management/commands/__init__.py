"""alohalab.management.commands: One command per operation of the CLI."""
