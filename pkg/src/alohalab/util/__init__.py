"""alohalab.util: Argument types and record helpers."""
