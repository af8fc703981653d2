#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# flake8: noqa
"""Run the uvbody CLI."""
from uvbody.cli.cli import run
