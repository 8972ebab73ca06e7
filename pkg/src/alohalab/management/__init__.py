"""alohalab.management: Django management-system integration."""
