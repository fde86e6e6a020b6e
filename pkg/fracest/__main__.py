"""Allow running as: python -m fracest point ..."""
from fracest.cli import main

main()
