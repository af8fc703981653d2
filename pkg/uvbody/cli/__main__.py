#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Start the uvbody CLI."""
from uvbody.cli.cli import run

if __name__ == "__main__":
    run()
