#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Entry point for the misr4d command-line tool."""

import sys

from src.cli.app import main


if __name__ == "__main__":
    sys.exit(main())
