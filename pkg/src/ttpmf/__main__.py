"""Module entry point: ``python -m ttpmf`` behaves like the ``ttpmf`` script."""

from ttpmf.cli import main

raise SystemExit(main())
