"""Allow “python -m alohalab analyze ...”."""

from alohalab.cli import main

main()
